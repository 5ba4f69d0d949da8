//! Loading implicit feedback from a ratings file and a KG triple file,
//! followed by the per-user 6:2:2 split and evaluation negatives.
//!
//!     cargo run --example dataset_loading

use std::fs;

use fedrkg::data::Dataset;

pub fn run_example() -> anyhow::Result<()> {
    let dir = std::env::temp_dir().join(format!("fedrkg-dataset-loading-{}", std::process::id()));
    fs::create_dir_all(&dir)?;
    let ratings = dir.join("ratings.txt");
    let kg = dir.join("kg.txt");

    // user 40 rates ten items, user 7 one item, user 12 only dislikes
    let mut text = String::new();
    for item in 0..10 {
        text.push_str(&format!("40 {item} {}\n", if item == 9 { 2 } else { 5 }));
    }
    text.push_str("40 10 4\n7 3 4.5\n12 1 1\n");
    fs::write(&ratings, text)?;
    let triples: String = (0..12).map(|i| format!("{i} {} {}\n", i % 2, 12 + i % 3)).collect();
    fs::write(&kg, triples)?;

    let (data, user_ids) = Dataset::from_files(&ratings, &kg, 4.0, 0)?;
    println!("{} users (original ids {user_ids:?}), {} items, {} entities", data.num_users, data.num_items, data.num_entities);
    for u in 0..data.num_users {
        println!(
            "user {u}: train {:?} valid {:?} test {:?} test negatives {:?}",
            data.splits.train[u], data.splits.valid[u], data.splits.test[u], data.negatives.test[u]
        );
    }
    // ten positives split 6/2/2, the single-positive user keeps it in train
    anyhow::ensure!(data.splits.train[1].len() == 6 && data.splits.valid[1].len() == 2 && data.splits.test[1].len() == 2);
    anyhow::ensure!(data.splits.train[0].len() == 1);

    fs::write(&ratings, "1 2 five\n")?;
    match Dataset::from_files(&ratings, &kg, 4.0, 0) {
        Ok(_) => anyhow::bail!("malformed file accepted"),
        Err(e) => println!("malformed line: {e}"),
    }
    fs::remove_dir_all(&dir)?;
    Ok(())
}

#[allow(dead_code)]
fn main() -> anyhow::Result<()> {
    run_example()
}
