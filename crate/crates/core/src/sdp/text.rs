//! Plain-text sparse SDP format, one record per line, `#` starts a comment.
//!
//! ```text
//! vars <m>
//! blocks <count>
//! block <j> <side>
//! eqs <p>
//! c <k> <value>
//! b <j> const <i> <l> <value>
//! b <j> <k> <i> <l> <value>
//! e <row> <k> <value>
//! f <row> <value>
//! end
//! ```
//!
//! Indices are 0-based, block entries use the upper triangle (`i <= l`) and
//! floats are written in shortest round-trip form.

use std::fmt::Write as _;

use super::{ConicProgram, LmiBlock};
use crate::error::{Error, Result};

pub fn write_program(p: &ConicProgram) -> String {
    let mut out = String::new();
    let _ = writeln!(
        out,
        "# sparse SDP: minimize c.z s.t. B0_j + sum z_k B_jk PSD, E z = f"
    );
    let _ = writeln!(out, "vars {}", p.num_vars());
    let _ = writeln!(out, "blocks {}", p.blocks().len());
    for (j, b) in p.blocks().iter().enumerate() {
        let _ = writeln!(out, "block {j} {}", b.side());
    }
    let _ = writeln!(out, "eqs {}", p.equalities().len());
    for (k, &v) in p.objective().iter().enumerate() {
        if v != 0.0 {
            let _ = writeln!(out, "c {k} {v:?}");
        }
    }
    for (j, b) in p.blocks().iter().enumerate() {
        for &(i, l, v) in b.constant_entries() {
            let _ = writeln!(out, "b {j} const {i} {l} {v:?}");
        }
        for &(k, i, l, v) in b.term_entries() {
            let _ = writeln!(out, "b {j} {k} {i} {l} {v:?}");
        }
    }
    for (r, e) in p.equalities().iter().enumerate() {
        for &(k, v) in &e.coeffs {
            let _ = writeln!(out, "e {r} {k} {v:?}");
        }
    }
    for (r, e) in p.equalities().iter().enumerate() {
        let _ = writeln!(out, "f {r} {:?}", e.rhs);
    }
    out.push_str("end\n");
    out
}

fn perr(line: usize, msg: impl Into<String>) -> Error {
    Error::Parse {
        line,
        msg: msg.into(),
    }
}

fn num<T: std::str::FromStr>(tok: Option<&str>, line: usize, what: &str) -> Result<T> {
    tok.ok_or_else(|| perr(line, format!("missing {what}")))?
        .parse()
        .map_err(|_| perr(line, format!("bad {what}")))
}

pub fn read_program(text: &str) -> Result<ConicProgram> {
    let mut prog: Option<ConicProgram> = None;
    let mut nblocks = None;
    let mut sides: Vec<Option<usize>> = Vec::new();
    let mut blocks: Vec<LmiBlock> = Vec::new();
    let mut eqs: Vec<(Vec<(usize, f64)>, f64)> = Vec::new();
    let mut ended = false;
    for (idx, raw) in text.lines().enumerate() {
        let ln = idx + 1;
        let line = raw.split('#').next().unwrap().trim();
        if line.is_empty() {
            continue;
        }
        if ended {
            return Err(perr(ln, "content after end"));
        }
        let mut t = line.split_whitespace();
        let kw = t.next().unwrap();
        let need_prog = |p: &Option<ConicProgram>| -> Result<()> {
            p.as_ref()
                .map(|_| ())
                .ok_or_else(|| perr(ln, "vars must come first"))
        };
        match kw {
            "vars" => {
                if prog.is_some() {
                    return Err(perr(ln, "duplicate vars"));
                }
                prog = Some(ConicProgram::new(num(t.next(), ln, "variable count")?));
            }
            "blocks" => {
                let n: usize = num(t.next(), ln, "block count")?;
                nblocks = Some(n);
                sides = vec![None; n];
            }
            "block" => {
                let j: usize = num(t.next(), ln, "block index")?;
                let s: usize = num(t.next(), ln, "block side")?;
                if j >= sides.len() {
                    return Err(perr(ln, "block index out of range"));
                }
                sides[j] = Some(s);
                if sides.iter().all(|s| s.is_some()) && blocks.is_empty() {
                    blocks = sides.iter().map(|s| LmiBlock::new(s.unwrap())).collect();
                }
            }
            "eqs" => {
                let p: usize = num(t.next(), ln, "equality count")?;
                eqs = vec![(Vec::new(), 0.0); p];
            }
            "c" => {
                need_prog(&prog)?;
                let k: usize = num(t.next(), ln, "variable index")?;
                let v: f64 = num(t.next(), ln, "value")?;
                let p = prog.as_mut().unwrap();
                if k >= p.num_vars() {
                    return Err(perr(ln, "variable index out of range"));
                }
                p.set_objective(k, v);
            }
            "b" => {
                need_prog(&prog)?;
                let m = prog.as_ref().unwrap().num_vars();
                let j: usize = num(t.next(), ln, "block index")?;
                let which = t.next().ok_or_else(|| perr(ln, "missing variable"))?;
                let i: usize = num(t.next(), ln, "row")?;
                let l: usize = num(t.next(), ln, "column")?;
                let v: f64 = num(t.next(), ln, "value")?;
                let b = blocks
                    .get_mut(j)
                    .ok_or_else(|| perr(ln, "block not declared"))?;
                if i > l || l >= b.side() {
                    return Err(perr(ln, "entry outside upper triangle"));
                }
                if which == "const" {
                    b.add_constant(i, l, v);
                } else {
                    let k: usize = which.parse().map_err(|_| perr(ln, "bad variable"))?;
                    if k >= m {
                        return Err(perr(ln, "variable index out of range"));
                    }
                    b.add_term(k, i, l, v);
                }
            }
            "e" => {
                need_prog(&prog)?;
                let r: usize = num(t.next(), ln, "row")?;
                let k: usize = num(t.next(), ln, "variable index")?;
                let v: f64 = num(t.next(), ln, "value")?;
                if k >= prog.as_ref().unwrap().num_vars() {
                    return Err(perr(ln, "variable index out of range"));
                }
                eqs.get_mut(r)
                    .ok_or_else(|| perr(ln, "equality row out of range"))?
                    .0
                    .push((k, v));
            }
            "f" => {
                let r: usize = num(t.next(), ln, "row")?;
                let v: f64 = num(t.next(), ln, "value")?;
                eqs.get_mut(r)
                    .ok_or_else(|| perr(ln, "equality row out of range"))?
                    .1 = v;
            }
            "end" => ended = true,
            other => return Err(perr(ln, format!("unknown record '{other}'"))),
        }
        if t.next().is_some() {
            return Err(perr(ln, "trailing tokens"));
        }
    }
    let last = text.lines().count();
    if !ended {
        return Err(perr(last, "missing end"));
    }
    let mut prog = prog.ok_or_else(|| perr(last, "missing vars"))?;
    if nblocks.is_some_and(|n| n != blocks.len()) {
        return Err(perr(last, "not every block declared"));
    }
    for b in blocks {
        prog.add_block(b);
    }
    for (coeffs, rhs) in eqs {
        prog.add_equality(coeffs, rhs);
    }
    Ok(prog)
}
