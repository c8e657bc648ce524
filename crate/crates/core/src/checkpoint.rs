//! Plain-text parameter checkpoints.
//!
//! Layout, one item per line, whitespace separated:
//!
//! ```text
//! mmfnet-checkpoint 1
//! lookback <L>
//! horizon <H>
//! ladder <s_1> ... <s_S>
//! mask_enabled <true|false>
//! tensor <mask|weight|bias> <scale> <dim_0> [<dim_1>]
//! <row 0 values>
//! ...
//! end
//! ```
//!
//! Tensors appear per scale in the order mask, weight, bias. Two-dimensional
//! tensors are written one row per line in row-major order; biases occupy a
//! single line. Values use Rust's shortest round-trip exponent notation, so
//! reading a checkpoint back reproduces every parameter bit for bit.

use std::fmt::Write as _;
use std::path::Path;

use ndarray::{Array1, Array2};

use crate::error::{MmfError, Result};
use crate::ladder::ScaleLadder;
use crate::model::{ModelConfig, ModelParams};

const MAGIC: &str = "mmfnet-checkpoint";
const VERSION: u32 = 1;

pub fn to_string(params: &ModelParams) -> String {
    let cfg = &params.config;
    let mut out = String::new();
    let ladder: Vec<String> = cfg.ladder.segment_lengths().iter().map(|s| s.to_string()).collect();
    writeln!(out, "{MAGIC} {VERSION}").unwrap();
    writeln!(out, "lookback {}", cfg.lookback).unwrap();
    writeln!(out, "horizon {}", cfg.horizon).unwrap();
    writeln!(out, "ladder {}", ladder.join(" ")).unwrap();
    writeln!(out, "mask_enabled {}", cfg.mask_enabled).unwrap();
    let row = |out: &mut String, vals: &mut dyn Iterator<Item = &f64>| {
        let line: Vec<String> = vals.map(|v| format!("{v:e}")).collect();
        writeln!(out, "{}", line.join(" ")).unwrap();
    };
    for (i, p) in params.scales.iter().enumerate() {
        for (name, m) in [("mask", &p.mask), ("weight", &p.weight)] {
            writeln!(out, "tensor {name} {i} {} {}", m.nrows(), m.ncols()).unwrap();
            for r in m.rows() {
                row(&mut out, &mut r.iter());
            }
        }
        writeln!(out, "tensor bias {i} {}", p.bias.len()).unwrap();
        row(&mut out, &mut p.bias.iter());
    }
    out.push_str("end\n");
    out
}

struct Lines<'a> {
    inner: std::iter::Enumerate<std::str::Lines<'a>>,
}

impl<'a> Lines<'a> {
    fn next(&mut self) -> Result<(u64, Vec<&'a str>)> {
        match self.inner.next() {
            Some((i, l)) => Ok((i as u64 + 1, l.split_whitespace().collect())),
            None => Err(MmfError::Parse {
                line: 0,
                column: 0,
                message: "unexpected end of checkpoint".into(),
            }),
        }
    }

    fn keyed(&mut self, key: &str) -> Result<(u64, Vec<&'a str>)> {
        let (n, toks) = self.next()?;
        if toks.first() != Some(&key) {
            return Err(bad(n, format!("expected `{key}`")));
        }
        Ok((n, toks[1..].to_vec()))
    }
}

fn bad(line: u64, message: String) -> MmfError {
    MmfError::Parse {
        line,
        column: 1,
        message,
    }
}

fn num<T: std::str::FromStr>(line: u64, tok: &str) -> Result<T> {
    tok.parse()
        .map_err(|_| bad(line, format!("`{tok}` is not a valid number")))
}

fn floats(line: u64, toks: &[&str], expected: usize) -> Result<Vec<f64>> {
    if toks.len() != expected {
        return Err(bad(line, format!("expected {expected} values, found {}", toks.len())));
    }
    toks.iter().map(|t| num::<f64>(line, t)).collect()
}

pub fn from_str(text: &str) -> Result<ModelParams> {
    let mut lines = Lines {
        inner: text.lines().enumerate(),
    };
    let (n, header) = lines.next()?;
    if header.first() != Some(&MAGIC) {
        return Err(bad(n, "not an mmfnet checkpoint".into()));
    }
    let version: u32 = num(n, header.get(1).copied().unwrap_or(""))?;
    if version != VERSION {
        return Err(bad(n, format!("unsupported checkpoint version {version}")));
    }
    let (n, t) = lines.keyed("lookback")?;
    let lookback: usize = num(n, t.first().copied().unwrap_or(""))?;
    let (n, t) = lines.keyed("horizon")?;
    let horizon: usize = num(n, t.first().copied().unwrap_or(""))?;
    let (n, t) = lines.keyed("ladder")?;
    let ladder = t.iter().map(|s| num::<usize>(n, s)).collect::<Result<Vec<_>>>()?;
    let (n, t) = lines.keyed("mask_enabled")?;
    let mask_enabled: bool = t
        .first()
        .and_then(|s| s.parse().ok())
        .ok_or_else(|| bad(n, "mask_enabled must be true or false".into()))?;

    let config = ModelConfig {
        lookback,
        horizon,
        ladder: ScaleLadder::new(ladder),
        mask_enabled,
    };
    let mut params = ModelParams::zeros(&config)?;
    for i in 0..params.scales.len() {
        for name in ["mask", "weight"] {
            let (n, t) = lines.keyed("tensor")?;
            let expect = {
                let target: &Array2<f64> = if name == "mask" {
                    &params.scales[i].mask
                } else {
                    &params.scales[i].weight
                };
                target.dim()
            };
            if t.len() != 4 || t[0] != name || num::<usize>(n, t[1])? != i {
                return Err(bad(n, format!("expected `tensor {name} {i} <rows> <cols>`")));
            }
            let dim: (usize, usize) = (num(n, t[2])?, num(n, t[3])?);
            if dim != expect {
                return Err(MmfError::Shape(format!(
                    "line {n}: {name} {i} has shape {dim:?}, config implies {expect:?}"
                )));
            }
            let mut data = Vec::with_capacity(dim.0 * dim.1);
            for _ in 0..dim.0 {
                let (n, t) = lines.next()?;
                data.extend(floats(n, &t, dim.1)?);
            }
            let m = Array2::from_shape_vec(dim, data).expect("sized above");
            if name == "mask" {
                params.scales[i].mask = m;
            } else {
                params.scales[i].weight = m;
            }
        }
        let (n, t) = lines.keyed("tensor")?;
        if t.len() != 3 || t[0] != "bias" || num::<usize>(n, t[1])? != i || num::<usize>(n, t[2])? != horizon {
            return Err(bad(n, format!("expected `tensor bias {i} {horizon}`")));
        }
        let (n, t) = lines.next()?;
        params.scales[i].bias = Array1::from(floats(n, &t, horizon)?);
    }
    let (n, t) = lines.next()?;
    if t != ["end"] {
        return Err(bad(n, "expected `end`".into()));
    }
    Ok(params)
}

pub fn save(params: &ModelParams, path: &Path) -> Result<()> {
    std::fs::write(path, to_string(params)).map_err(|e| MmfError::io(path, e))
}

pub fn load(path: &Path) -> Result<ModelParams> {
    let text = std::fs::read_to_string(path).map_err(|e| MmfError::io(path, e))?;
    from_str(&text)
}
