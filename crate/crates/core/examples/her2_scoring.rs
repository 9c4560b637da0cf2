//! HER2 membrane scoring and Ki-67 style percent positivity from cell
//! classes.

use ihcq::scoring::{her2_quantify, nuclear_quantify};
use ihcq::CellClass::*;

fn cells(spec: &[(ihcq::CellClass, usize)]) -> Vec<ihcq::CellClass> {
    spec.iter().flat_map(|&(c, n)| std::iter::repeat_n(c, n)).collect()
}

fn main() -> Result<(), ihcq::scoring::ScoreError> {
    let patches = [
        cells(&[(M0NoStaining, 70), (M1FaintIncomplete, 10), (M2ModerateComplete, 8), (M3IntenseComplete, 12)]),
        cells(&[(M0NoStaining, 60), (M1FaintIncomplete, 20), (M2ModerateComplete, 15), (M3IntenseComplete, 5)]),
        cells(&[(M0NoStaining, 85), (M1FaintIncomplete, 15)]),
        cells(&[(M0NoStaining, 95), (M1FaintIncomplete, 5)]),
    ];
    for classes in &patches {
        let s = her2_quantify(classes.iter().copied())?;
        let pct: Vec<String> = s.percentages.iter().map(|p| format!("{p:.0}%")).collect();
        println!("{} -> {} {}", pct.join("/"), s.score, s.score.assessment());
    }

    let ki67 = nuclear_quantify(cells(&[(Immunopositive, 42), (Immunonegative, 158)]))?;
    println!("Ki-67: {:.1}% positive", ki67.percent_positive);
    Ok(())
}
