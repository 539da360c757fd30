//! Margin-percentile and largest-logit grading of a small margin set.

use mmat::strategy::{grade_by_margin, grade_by_zmax, GradeBudgets};

fn main() -> mmat::Result<()> {
    let margins: Vec<(usize, f64)> = (1..=10).map(|k| (k - 1, k as f64 / 255.0)).collect();
    let table = grade_by_margin(&margins, (0.4, 0.7))?;
    println!("{}", table.summary());
    table.write_csv(std::io::stdout())?;

    let zmax: Vec<(usize, f64)> = [0.5, 1.8, 2.5, 4.0, 5.9, 6.1, 9.0].iter().copied().enumerate().collect();
    let base = 8.0 / 255.0;
    let budgets = GradeBudgets {
        a: 5.0 / 8.0 * base,
        b: 10.0 / 8.0 * base,
        c: 15.0 / 8.0 * base,
    };
    let table = grade_by_zmax(&zmax, 2.0, 6.0, budgets)?;
    println!("{}", table.summary());
    Ok(())
}
