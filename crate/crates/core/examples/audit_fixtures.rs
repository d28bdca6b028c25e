//! Classifies every bundled AV/ARKit metadata pair and prints the fixes.

use depthaudit::{audit_report, classify, fixture_database};

fn main() -> depthaudit::Result<()> {
    let verdicts = fixture_database()
        .iter()
        .map(classify)
        .collect::<depthaudit::Result<Vec<_>>>()?;
    print!("{}", audit_report(&verdicts)?.summary());
    Ok(())
}
