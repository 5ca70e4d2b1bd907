use std::io::{self, Write};

use super::LinearProgram;

const TERMS_PER_LINE: usize = 6;

fn write_terms<W: Write>(w: &mut W, terms: &[(f64, &str)]) -> io::Result<()> {
    if terms.is_empty() {
        return write!(w, " 0");
    }
    for (idx, (c, name)) in terms.iter().enumerate() {
        if idx > 0 && idx % TERMS_PER_LINE == 0 {
            write!(w, "\n   ")?;
        }
        let sign = if *c < 0.0 { '-' } else { '+' };
        if idx == 0 && sign == '+' {
            write!(w, " {} {name}", c.abs())?;
        } else {
            write!(w, " {sign} {} {name}", c.abs())?;
        }
    }
    Ok(())
}

/// Writes `lp` in CPLEX LP text format. Variables are nonnegative, the
/// format's default, so no bounds section is needed.
pub fn write_lp_format<W: Write>(lp: &LinearProgram, mut w: W) -> io::Result<()> {
    writeln!(w, "\\ {} rows, {} columns", lp.num_rows(), lp.num_columns())?;
    writeln!(w, "Maximize")?;
    let obj: Vec<(f64, &str)> = lp
        .columns
        .iter()
        .filter(|c| c.cost != 0.0)
        .map(|c| (c.cost, c.name.as_str()))
        .collect();
    write!(w, " obj:")?;
    write_terms(&mut w, &obj)?;
    writeln!(w)?;
    writeln!(w, "Subject To")?;
    let mut rows: Vec<Vec<(f64, &str)>> = vec![Vec::new(); lp.num_rows()];
    for c in &lp.columns {
        for &(i, v) in &c.entries {
            rows[i].push((v, c.name.as_str()));
        }
    }
    for (i, terms) in rows.iter().enumerate() {
        write!(w, " {}:", lp.row_names[i])?;
        write_terms(&mut w, terms)?;
        writeln!(w, " = {}", lp.rhs[i])?;
    }
    writeln!(w, "End")?;
    Ok(())
}
