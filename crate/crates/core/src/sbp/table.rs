//! Plain-text coefficient tables for diagonal-norm first-derivative operators.
//!
//! A table holds one or more stanzas:
//!
//! ```text
//! # comment
//! operator traditional-4
//! order 4
//! norm 17/48 59/48 43/48 49/48
//! interior 1/12 -2/3 0 2/3 -1/12
//! row -24/17 59/34 -4/17 -3/34
//! row -1/2 0 1/2
//! row 4/43 -59/86 0 59/86 -4/43
//! row 3/98 0 -59/98 0 32/49 -4/49
//! end
//! ```
//!
//! `norm` lists the boundary weights for unit spacing, `interior` the full
//! centered stencil, and each `row` one boundary row of the derivative
//! (unit spacing, starting at the first node). When the `row` lines are
//! omitted the closure is derived from the accuracy conditions and the
//! summation-by-parts property, choosing the minimum-norm solution when the
//! conditions leave free parameters. Numbers may be decimals or fractions `p/q`.

use crate::error::{Error, Result};
use nalgebra::{DMatrix, DVector};

/// One operator stanza.
#[derive(Debug, Clone, PartialEq)]
pub struct OperatorTable {
    pub name: String,
    pub order: usize,
    /// Boundary norm weights for unit spacing.
    pub norm: Vec<f64>,
    /// Interior coefficients `d_1..d_K` of the antisymmetric stencil.
    pub interior: Vec<f64>,
    /// Boundary rows of the derivative for unit spacing.
    pub closure: Vec<Vec<f64>>,
}

pub const BUILTIN: &str = "\
operator traditional-2
order 2
norm 1/2
interior -1/2 0 1/2
row -1 1
end

operator traditional-4
order 4
norm 17/48 59/48 43/48 49/48
interior 1/12 -2/3 0 2/3 -1/12
row -24/17 59/34 -4/17 -3/34
row -1/2 0 1/2
row 4/43 -59/86 0 59/86 -4/43
row 3/98 0 -59/98 0 32/49 -4/49
end

operator traditional-6
order 6
norm 13649/43200 12013/8640 2711/4320 5359/4320 7877/8640 43801/43200
interior -1/60 3/20 -3/4 0 3/4 -3/20 1/60
end
";

fn parse_number(tok: &str, line: usize) -> Result<f64> {
    let bad = || Error::Table { line, msg: format!("bad number '{tok}'") };
    match tok.split_once('/') {
        Some((p, q)) => {
            let p: f64 = p.parse().map_err(|_| bad())?;
            let q: f64 = q.parse().map_err(|_| bad())?;
            if q == 0.0 {
                return Err(bad());
            }
            Ok(p / q)
        }
        None => tok.parse().map_err(|_| bad()),
    }
}

/// Parses every stanza of a table.
pub fn parse_tables(text: &str) -> Result<Vec<OperatorTable>> {
    struct Partial {
        name: String,
        order: Option<usize>,
        norm: Vec<f64>,
        interior: Vec<f64>,
        rows: Vec<Vec<f64>>,
        start: usize,
    }
    let mut out = Vec::new();
    let mut cur: Option<Partial> = None;
    for (idx, raw) in text.lines().enumerate() {
        let line = idx + 1;
        let content = raw.split('#').next().unwrap().trim();
        if content.is_empty() {
            continue;
        }
        let mut toks = content.split_whitespace();
        let key = toks.next().unwrap();
        let nums = |toks: std::str::SplitWhitespace| -> Result<Vec<f64>> {
            toks.map(|t| parse_number(t, line)).collect()
        };
        match key {
            "operator" => {
                if cur.is_some() {
                    return Err(Error::Table { line, msg: "missing 'end' before new operator".into() });
                }
                let name = toks.next().unwrap_or("unnamed").to_string();
                cur = Some(Partial { name, order: None, norm: vec![], interior: vec![], rows: vec![], start: line });
            }
            "end" => {
                let p = cur.take().ok_or(Error::Table { line, msg: "'end' without operator".into() })?;
                out.push(finish(p.name, p.order, p.norm, p.interior, p.rows, p.start)?);
            }
            _ => {
                let p = cur.as_mut().ok_or(Error::Table { line, msg: format!("'{key}' outside operator stanza") })?;
                match key {
                    "order" => {
                        let o = toks.next().and_then(|t| t.parse().ok());
                        p.order = Some(o.ok_or(Error::Table { line, msg: "bad order".into() })?);
                    }
                    "norm" => p.norm = nums(toks)?,
                    "interior" => p.interior = nums(toks)?,
                    "row" => p.rows.push(nums(toks)?),
                    other => return Err(Error::Table { line, msg: format!("unknown key '{other}'") }),
                }
            }
        }
    }
    if let Some(p) = cur {
        return Err(Error::Table { line: p.start, msg: "stanza not terminated by 'end'".into() });
    }
    Ok(out)
}

fn finish(
    name: String,
    order: Option<usize>,
    norm: Vec<f64>,
    stencil: Vec<f64>,
    rows: Vec<Vec<f64>>,
    line: usize,
) -> Result<OperatorTable> {
    let err = |msg: String| Error::Table { line, msg };
    let order = order.ok_or_else(|| err("missing order".into()))?;
    if order == 0 || order % 2 == 1 {
        return Err(err(format!("order must be even, got {order}")));
    }
    if norm.is_empty() || norm.iter().any(|&w| !(w > 0.0)) {
        return Err(err("norm weights must be positive".into()));
    }
    if stencil.len().is_multiple_of(2) || stencil.len() < 3 {
        return Err(err("interior stencil must have odd length >= 3".into()));
    }
    let k = stencil.len() / 2;
    for j in 0..=k {
        if (stencil[k + j] + stencil[k - j]).abs() > 1e-14 {
            return Err(err("interior stencil must be antisymmetric".into()));
        }
    }
    let interior: Vec<f64> = stencil[k + 1..].to_vec();
    let r = norm.len();
    if r < k {
        return Err(err(format!("closure of {r} rows cannot host a stencil of half-width {k}")));
    }
    let closure = if rows.is_empty() {
        derive_closure(&norm, &interior, order / 2).map_err(err)?
    } else if rows.len() != r {
        return Err(err(format!("expected {r} closure rows, got {}", rows.len())));
    } else {
        rows
    };
    let table = OperatorTable { name, order, norm, interior, closure };
    table.verify().map_err(err)?;
    Ok(table)
}

impl OperatorTable {
    pub fn half_width(&self) -> usize {
        self.interior.len()
    }

    /// Width (number of columns) of the boundary block.
    pub fn closure_width(&self) -> usize {
        let r = self.norm.len();
        let from_rows = self.closure.iter().map(|row| row.len()).max().unwrap_or(0);
        from_rows.max(r + self.half_width() - 1)
    }

    /// Interior coefficient at signed offset `k`.
    pub fn stencil(&self, k: isize) -> f64 {
        let a = k.unsigned_abs();
        if a == 0 || a > self.interior.len() {
            0.0
        } else if k > 0 {
            self.interior[a - 1]
        } else {
            -self.interior[a - 1]
        }
    }

    /// Checks boundary accuracy and the summation-by-parts property of the boundary block.
    fn verify(&self) -> std::result::Result<(), String> {
        let r = self.norm.len();
        let p = self.order / 2;
        let width = self.closure_width() + self.half_width();
        for (i, row) in self.closure.iter().enumerate() {
            for q in 0..=p {
                let got: f64 = row.iter().enumerate().map(|(j, c)| c * (j as f64).powi(q as i32)).sum();
                let want = if q == 0 { 0.0 } else { q as f64 * (i as f64).powi(q as i32 - 1) };
                let scale = (i as f64 + row.len() as f64).powi(q as i32).max(1.0);
                if (got - want).abs() > 1e-11 * scale {
                    return Err(format!("closure row {i} fails accuracy for degree {q}: {got} vs {want}"));
                }
            }
        }
        // Q = H D on the leading block must satisfy Q + Q^T = diag(-1, 0, ...).
        let q = |i: usize, j: usize| -> f64 {
            if i < r {
                self.norm[i] * self.closure[i].get(j).copied().unwrap_or(0.0)
            } else {
                self.stencil(j as isize - i as isize)
            }
        };
        for i in 0..width {
            for j in 0..width {
                if i >= r && j >= r {
                    continue;
                }
                let b = if i == 0 && j == 0 { -1.0 } else { 0.0 };
                let s = q(i, j) + q(j, i);
                if (s - b).abs() > 1e-13 {
                    return Err(format!("summation-by-parts property fails at ({i}, {j}): {s}"));
                }
            }
        }
        Ok(())
    }
}

/// Solves for the boundary block `Q = H D` given the norm and interior stencil.
fn derive_closure(norm: &[f64], interior: &[f64], p: usize) -> std::result::Result<Vec<Vec<f64>>, String> {
    let r = norm.len();
    let k = interior.len();
    let d = |off: isize| -> f64 {
        let a = off.unsigned_abs();
        if a == 0 || a > k {
            0.0
        } else if off > 0 {
            interior[a - 1]
        } else {
            -interior[a - 1]
        }
    };
    let mut unknown = vec![vec![None; r]; r];
    let mut n_unk = 0;
    for i in 0..r {
        for j in i + 1..r {
            unknown[i][j] = Some(n_unk);
            n_unk += 1;
        }
    }
    let width = r + k;
    let n_eq = r * (p + 1);
    let mut a = DMatrix::<f64>::zeros(n_eq, n_unk.max(1));
    let mut b = DVector::<f64>::zeros(n_eq);
    for i in 0..r {
        for q in 0..=p {
            let e = i * (p + 1) + q;
            let pw = |j: usize| (j as f64).powi(q as i32);
            let mut rhs = if q == 0 { 0.0 } else { norm[i] * q as f64 * (i as f64).powi(q as i32 - 1) };
            if i == 0 {
                rhs += 0.5 * pw(0);
            }
            for j in 0..width {
                if j >= r {
                    rhs -= d(j as isize - i as isize) * pw(j);
                } else if let Some(u) = unknown[i][j] {
                    a[(e, u)] += pw(j);
                } else if let Some(u) = unknown[j][i] {
                    a[(e, u)] -= pw(j);
                }
            }
            b[e] = rhs;
        }
    }
    let svd = a.clone().svd(true, true);
    let x = svd.solve(&b, 1e-12).map_err(|e| e.to_string())?;
    let resid = (&a * &x - &b).amax();
    if resid > 1e-10 {
        return Err(format!("closure conditions are inconsistent with the norm (residual {resid:e})"));
    }
    let mut rows = vec![vec![0.0; width]; r];
    for i in 0..r {
        for j in 0..width {
            let qij = if j >= r {
                d(j as isize - i as isize)
            } else if let Some(u) = unknown[i][j] {
                x[u]
            } else if let Some(u) = unknown[j][i] {
                -x[u]
            } else {
                0.0
            } - if i == 0 && j == 0 { 0.5 } else { 0.0 };
            rows[i][j] = qij / norm[i];
        }
        while rows[i].last() == Some(&0.0) {
            rows[i].pop();
        }
    }
    Ok(rows)
}

/// Built-in table for a traditional operator of the given order.
pub fn builtin(order: usize) -> Result<OperatorTable> {
    parse_tables(BUILTIN)?
        .into_iter()
        .find(|t| t.order == order)
        .ok_or(Error::UnsupportedOrder(order))
}
