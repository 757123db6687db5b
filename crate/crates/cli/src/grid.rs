//! Sweep grid syntax: `a..b` for the integers a through b, `a:b:n` for n
//! evenly spaced points from a to b, or a comma-separated list.

pub fn parse(text: &str) -> Result<Vec<f64>, String> {
    let text = text.trim();
    if text.is_empty() {
        return Ok(Vec::new());
    }
    let num = |s: &str| -> Result<f64, String> {
        let v: f64 = s.trim().parse().map_err(|_| format!("bad grid value {s:?}"))?;
        if v.is_finite() {
            Ok(v)
        } else {
            Err(format!("grid value {s:?} is not finite"))
        }
    };
    if let Some((a, b)) = text.split_once("..") {
        let int = |s: &str| s.trim().parse::<i64>().map_err(|_| format!("bad integer range bound {s:?}"));
        let (a, b) = (int(a)?, int(b)?);
        return Ok((a..=b).map(|v| v as f64).collect());
    }
    let parts: Vec<&str> = text.split(':').collect();
    if parts.len() == 3 {
        let (a, b) = (num(parts[0])?, num(parts[1])?);
        let n: usize = parts[2]
            .trim()
            .parse()
            .map_err(|_| format!("bad point count {:?}", parts[2]))?;
        return Ok(match n {
            0 => Vec::new(),
            1 => vec![a],
            _ => (0..n).map(|k| a + (b - a) * k as f64 / (n - 1) as f64).collect(),
        });
    }
    if parts.len() != 1 {
        return Err(format!("bad grid {text:?}, expected a..b, a:b:n or a comma list"));
    }
    text.split(',').filter(|s| !s.trim().is_empty()).map(num).collect()
}
