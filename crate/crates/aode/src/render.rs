//! Small text-rendering helpers shared by report printers.

/// Formats `x` with three significant figures, plain decimal notation.
/// Matches the table style used for WER percentages: 2.15, 9.70, 10.1, 101.
pub fn sig3(x: f64) -> String {
    if !x.is_finite() {
        return x.to_string();
    }
    if x == 0.0 {
        return "0.00".to_string();
    }
    let mut decimals = decimals_for(x.abs());
    let mut rounded = round_to(x, decimals);
    // Rounding can push the value across a power of ten (9.995 -> 10.0);
    // recompute the digit budget for the rounded value.
    let adjusted = decimals_for(rounded.abs());
    if adjusted != decimals {
        decimals = adjusted;
        rounded = round_to(x, decimals);
    }
    format!("{rounded:.decimals$}")
}

fn decimals_for(abs: f64) -> usize {
    let magnitude = abs.log10().floor() as i32;
    (2 - magnitude).max(0) as usize
}

fn round_to(x: f64, decimals: usize) -> f64 {
    let scale = 10f64.powi(decimals as i32);
    (x * scale).round() / scale
}

/// Renders rows as a fixed-width table with a header and column alignment.
pub fn table(header: &[String], rows: &[Vec<String>]) -> String {
    let mut widths: Vec<usize> = header.iter().map(String::len).collect();
    for row in rows {
        for (i, cell) in row.iter().enumerate() {
            if i < widths.len() {
                widths[i] = widths[i].max(cell.len());
            }
        }
    }
    let render_row = |cells: &[String]| {
        cells
            .iter()
            .enumerate()
            .map(|(i, c)| {
                if i == 0 {
                    format!("{c:<width$}", width = widths[i])
                } else {
                    format!("{c:>width$}", width = widths[i])
                }
            })
            .collect::<Vec<_>>()
            .join("  ")
    };
    let mut out = String::new();
    out.push_str(render_row(header).trim_end());
    out.push('\n');
    out.push_str(&"-".repeat(widths.iter().sum::<usize>() + 2 * (widths.len() - 1)));
    out.push('\n');
    for row in rows {
        out.push_str(render_row(row).trim_end());
        out.push('\n');
    }
    out
}

#[cfg(test)]
mod tests {
    use super::sig3;

    #[test]
    fn three_significant_figures() {
        assert_eq!(sig3(10.127), "10.1");
        assert_eq!(sig3(9.7049), "9.70");
        assert_eq!(sig3(2.15), "2.15");
        assert_eq!(sig3(0.335), "0.335");
        assert_eq!(sig3(101.3), "101");
        assert_eq!(sig3(0.0), "0.00");
        assert_eq!(sig3(9.996), "10.0");
        assert_eq!(sig3(99.96), "100");
        assert_eq!(sig3(-3.456), "-3.46");
    }
}
