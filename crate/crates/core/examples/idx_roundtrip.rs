//! Write and read back IDX image and label files.

use mmat::data::{load_idx_dataset, read_idx, write_idx, IdxArray, IdxKind};

fn main() -> mmat::Result<()> {
    let dir = std::env::temp_dir().join("mmat-idx-example");
    std::fs::create_dir_all(&dir)?;
    let images = IdxArray::new(IdxKind::Images, vec![3, 2, 2], (0..12).map(|v| v * 20).collect())?;
    let labels = IdxArray::new(IdxKind::Labels, vec![3], vec![0, 1, 1])?;
    write_idx(dir.join("images.idx"), &images)?;
    write_idx(dir.join("labels.idx"), &labels)?;

    assert_eq!(read_idx(dir.join("images.idx"))?, images);
    let data = load_idx_dataset(dir.join("images.idx"), dir.join("labels.idx"), 2)?;
    println!("{} examples of dimension {}, labels {:?}", data.len(), data.dim(), data.labels);
    println!("first row {:?}", data.x.row(0));

    let mut raw = std::fs::read(dir.join("images.idx"))?;
    raw.truncate(18);
    match mmat::data::read_idx_bytes(&raw) {
        Err(e) => println!("truncated file: {e}"),
        Ok(_) => println!("truncated file unexpectedly parsed"),
    }
    Ok(())
}
