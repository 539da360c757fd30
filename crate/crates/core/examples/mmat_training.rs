//! Full MMAT pipeline: teacher, strategy net, graded budgets, student.

use mmat::attacks::AttackSpec;
use mmat::data::gen_rings;
use mmat::evaluation::{natural_accuracy, robust_accuracy};
use mmat::nets::Network;
use mmat::strategy::{assign_budgets, Grade, StrategyParams};
use mmat::training::{train, BudgetPlan, Method, Teacher, TrainConfig};

fn main() -> mmat::Result<()> {
    let train_set = gen_rings(400, &[1.0, 1.5], 0.1, 1)?;
    let test = gen_rings(200, &[1.0, 1.5], 0.1, 2)?;
    let eps = 0.1;
    let config = TrainConfig {
        seed: 3,
        train_metrics: false,
        ..TrainConfig::default()
    };
    // the distillation term is large early on, so the student uses a smaller step
    let student_config = TrainConfig {
        lr: 0.01,
        ..config.clone()
    };
    let fit = |config: &TrainConfig, method: &Method, init_seed: u64| -> mmat::Result<Network> {
        Ok(train(config, Network::mlp(&[2, 32, 32, 2], init_seed)?, &train_set, None, method)?.final_net)
    };

    let teacher = fit(&config, &Method::sat(0.75 * eps), 10)?;
    let strategy = fit(&config, &Method::sat(eps), 11)?;
    let assignment = assign_budgets(&strategy, "sat", &train_set, &StrategyParams::zmax_default(eps))?;
    let count = |g: Grade| assignment.grades.iter().filter(|&&x| x == g).count();
    println!("grades: A {} B {} C {}", count(Grade::A), count(Grade::B), count(Grade::C));

    let student = fit(
        &student_config,
        &Method::Mmat {
            teacher: Teacher::frozen(teacher, "teacher"),
            budgets: BudgetPlan::Static(assignment),
        },
        12,
    )?;
    let pgd = AttackSpec::pgd20(eps, 4);
    for (name, net) in [("sat", &strategy), ("mmat", &student)] {
        println!(
            "{name:>5}: NA {:.3}  RA {:.3}",
            natural_accuracy(net, &test)?.value(),
            robust_accuracy(net, &test, &pgd)?.value()
        );
    }
    Ok(())
}
