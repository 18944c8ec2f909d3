//! Writes the bundled toy panel and its transform table.
//!
//! The panel mimics a country-by-indicator macro dataset: 16 rows, 10 columns
//! and 181 quarters. Transformed growth rates follow a two-by-two factor
//! model and are integrated back into positive levels, so the transform table
//! recovers the factor structure. Some series start late.
//!
//! ```text
//! cargo run --example toy_panel -- data
//! ```

use std::fs;
use std::path::PathBuf;

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use matfactor::io::{save_panel, Panel, Transform};
use matfactor::MaskedSeries;

const ROWS: [&str; 16] = [
    "AU", "AUT", "CAN", "DK", "FIN", "FRA", "GER", "GR", "IE", "ITA", "NL", "NZL", "NOR", "SWE", "UK", "USA",
];

const COLS: [(&str, Transform, f64); 10] = [
    ("P:IP", Transform::DiffLn, 0.01),
    ("P:TM", Transform::DiffLn, 0.01),
    ("GDP", Transform::DiffLn, 0.005),
    ("CPI:Food", Transform::Diff2Ln, 0.002),
    ("CPI:Energy", Transform::Diff2Ln, 0.004),
    ("CPI:Total", Transform::Diff2Ln, 0.001),
    ("IR:L", Transform::Diff, 0.2),
    ("IR:S", Transform::Diff, 0.3),
    ("IT:EX", Transform::DiffLn, 0.02),
    ("IT:IM", Transform::DiffLn, 0.02),
];

const PERIODS: usize = 181;
// number of (row, col) series that start late
const LATE_STARTS: usize = 45;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let dir = PathBuf::from(std::env::args().nth(1).unwrap_or_else(|| "data".into()));
    let mut rng = ChaCha8Rng::seed_from_u64(181);
    let (a, b) = (ROWS.len(), COLS.len());
    let mut normal = |n: usize, m: usize| DMatrix::<f64>::from_fn(n, m, |_, _| rng.sample(StandardNormal));

    let r = normal(a, 2);
    let c = normal(b, 2);
    let mut f = normal(2, 2);
    let mut growth = Vec::with_capacity(PERIODS);
    for _ in 0..PERIODS {
        f = &f * 0.5 + normal(2, 2);
        let x = &r * &f * c.transpose() + normal(a, b);
        growth.push(x);
    }

    // integrate each growth series into levels the transform table undoes
    let mut levels = vec![DMatrix::<f64>::zeros(a, b); PERIODS];
    for (j, &(_, transform, scale)) in COLS.iter().enumerate() {
        for i in 0..a {
            let (mut level, mut slope) = (4.6, 0.0);
            for t in 0..PERIODS {
                let x = growth[t][(i, j)] * scale;
                let value = match transform {
                    Transform::Diff => {
                        level += x;
                        level + 5.0
                    }
                    Transform::DiffLn => {
                        level += x;
                        level.exp()
                    }
                    Transform::Diff2Ln => {
                        slope += x;
                        level += slope;
                        level.exp()
                    }
                    Transform::None => x,
                };
                levels[t][(i, j)] = (value * 1e6).round() / 1e6;
            }
        }
    }

    let mut mask = vec![DMatrix::from_element(a, b, true); PERIODS];
    let mut rng = ChaCha8Rng::seed_from_u64(182);
    for _ in 0..LATE_STARTS {
        let (i, j) = (rng.gen_range(0..a), rng.gen_range(0..b));
        let start = rng.gen_range(20..=153);
        for w in mask.iter_mut().take(start) {
            w[(i, j)] = false;
        }
    }

    fs::create_dir_all(&dir)?;
    let panel = Panel {
        series: MaskedSeries::new(levels, mask)?,
        row_ids: ROWS.iter().map(|s| s.to_string()).collect(),
        col_ids: COLS.iter().map(|c| c.0.to_string()).collect(),
    };
    save_panel(dir.join("toy_panel.csv"), &panel)?;
    let mut table = String::from("col_id,transform\n");
    for (id, transform, _) in COLS {
        table += &format!("{id},{transform}\n");
    }
    fs::write(dir.join("toy_transforms.csv"), table)?;
    let missing = 1.0 - matfactor::panel::observed_fraction(&panel.series);
    println!("wrote {} ({:.1}% missing)", dir.join("toy_panel.csv").display(), 100.0 * missing);
    Ok(())
}
