//! Plain-text checkpoints. The format is line-oriented: a version header,
//! the resolved run configuration echoed verbatim for provenance, every
//! model parameter, and (optionally) the optimizer state so training can
//! resume exactly. Floats are written in exponential form, which Rust
//! prints as the shortest string that parses back to the identical bits.

use std::path::Path;

use crate::config::RunConfig;
use crate::encoder::ModelParams;
use crate::error::{CoreError, Result};
use crate::optimizer::{AdamHyper, AdamState, RiemannianAdamState};

pub const FORMAT_VERSION: u32 = 1;
const MAGIC: &str = "orbitax-checkpoint";

/// Optimizer moments for every parameter group.
#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerSnapshot {
    pub adapter: AdamState,
    pub kappa: AdamState,
    /// One constrained state per row of each spherical layer.
    pub layer_rows: Vec<Vec<RiemannianAdamState>>,
    pub mu_rows: Vec<Vec<RiemannianAdamState>>,
}

/// A saved model plus its provenance and (optionally) optimizer state.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub format_version: u32,
    pub config_echo: String,
    pub params: ModelParams,
    pub optimizer: Option<OptimizerSnapshot>,
}

fn fmt_row(row: &[f64]) -> String {
    row.iter()
        .map(|v| format!("{v:e}"))
        .collect::<Vec<_>>()
        .join(" ")
}

fn fmt_matrix(out: &mut String, name: &str, m: &[Vec<f64>]) {
    out.push_str(&format!("matrix {name} {} {}\n", m.len(), m[0].len()));
    for row in m {
        out.push_str(&fmt_row(row));
        out.push('\n');
    }
}

fn fmt_hyper(h: &AdamHyper) -> String {
    format!("hyper {:e} {:e} {:e} {:e}", h.beta1, h.beta2, h.eta, h.eps)
}

impl Checkpoint {
    pub fn new(params: ModelParams, config: &RunConfig) -> Self {
        Checkpoint {
            format_version: FORMAT_VERSION,
            config_echo: config.echo(),
            params,
            optimizer: None,
        }
    }

    /// Renders the whole checkpoint as text.
    pub fn to_text(&self) -> String {
        let p = &self.params;
        let mut s = format!("{MAGIC} {}\n", self.format_version);
        s.push_str("config_begin\n");
        s.push_str(&self.config_echo);
        if !self.config_echo.ends_with('\n') {
            s.push('\n');
        }
        s.push_str("config_end\n");
        s.push_str(&format!("d {}\n", p.d));
        s.push_str(&format!("d_plm {}\n", p.d_plm));
        s.push_str(&format!("kappa_max {:e}\n", p.kappa_max));
        s.push_str(&format!("identity_mu {}\n", p.identity_mu));
        match p.constant_kappa {
            Some(v) => s.push_str(&format!("constant_kappa {v:e}\n")),
            None => s.push_str("constant_kappa none\n"),
        }
        fmt_matrix(&mut s, "adapter", &p.adapter);
        s.push_str(&format!("layers {}\n", p.layers.len()));
        for (i, m) in p.layers.iter().enumerate() {
            fmt_matrix(&mut s, &format!("layer{i}"), m);
        }
        s.push_str(&format!("mu_head {}\n", p.mu_head.len()));
        for (i, m) in p.mu_head.iter().enumerate() {
            fmt_matrix(&mut s, &format!("mu{i}"), m);
        }
        s.push_str(&format!("vector kappa_weights {}\n", p.kappa_weights.len()));
        s.push_str(&fmt_row(&p.kappa_weights));
        s.push('\n');
        s.push_str(&format!("scalar kappa_bias {:e}\n", p.kappa_bias));
        if let Some(opt) = &self.optimizer {
            s.push_str("opt_begin\n");
            for (name, st) in [("adapter", &opt.adapter), ("kappa", &opt.kappa)] {
                s.push_str(&format!(
                    "adam {name} {} {} {}\n",
                    st.t,
                    st.m.len(),
                    fmt_hyper(&st.hyper)
                ));
                s.push_str(&fmt_row(&st.m));
                s.push('\n');
                s.push_str(&fmt_row(&st.v));
                s.push('\n');
            }
            for (name, stack) in [("layers", &opt.layer_rows), ("mu_head", &opt.mu_rows)] {
                s.push_str(&format!("radam {name} {}\n", stack.len()));
                for rows in stack {
                    s.push_str(&format!(
                        "rows {} {} {}\n",
                        rows.len(),
                        rows.first().map_or(0, |r| r.m.len()),
                        rows.first()
                            .map_or_else(|| fmt_hyper(&AdamHyper::default()), |r| fmt_hyper(
                                &r.hyper
                            ))
                    ));
                    for r in rows {
                        s.push_str(&format!("row {} {:e} ", r.t, r.v));
                        s.push_str(&fmt_row(&r.m));
                        s.push('\n');
                    }
                }
            }
            s.push_str("opt_end\n");
        }
        s
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_text()).map_err(|e| CoreError::Io {
            path: path.display().to_string(),
            source: e,
        })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| CoreError::Io {
            path: path.display().to_string(),
            source: e,
        })?;
        Self::from_text(&text).map_err(|e| match e {
            CoreError::Parse { line, msg, .. } => CoreError::Parse {
                path: path.display().to_string(),
                line,
                msg,
            },
            other => other,
        })
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut rd = Reader::new(text);
        let header = rd.line()?;
        let mut it = header.split_whitespace();
        if it.next() != Some(MAGIC) {
            return rd.err("not a checkpoint file");
        }
        let format_version: u32 = rd.parse_tok(it.next())?;
        if format_version != FORMAT_VERSION {
            return rd.err(format!("unsupported format version {format_version}"));
        }
        rd.expect("config_begin")?;
        let mut config_echo = String::new();
        loop {
            let l = rd.line()?;
            if l == "config_end" {
                break;
            }
            config_echo.push_str(l);
            config_echo.push('\n');
        }
        let d: usize = rd.kv("d")?;
        let d_plm: usize = rd.kv("d_plm")?;
        let kappa_max: f64 = rd.kv("kappa_max")?;
        let identity_mu: bool = rd.kv("identity_mu")?;
        let ck_line = rd.line()?.to_string();
        let constant_kappa = match ck_line.strip_prefix("constant_kappa ") {
            Some("none") => None,
            Some(v) => Some(rd.parse_tok(Some(v))?),
            None => return rd.err("expected constant_kappa"),
        };
        let adapter = rd.matrix("adapter")?;
        let n_layers: usize = rd.kv("layers")?;
        let layers = (0..n_layers)
            .map(|i| rd.matrix(&format!("layer{i}")))
            .collect::<Result<Vec<_>>>()?;
        let n_mu: usize = rd.kv("mu_head")?;
        let mu_head = (0..n_mu)
            .map(|i| rd.matrix(&format!("mu{i}")))
            .collect::<Result<Vec<_>>>()?;
        let kw_len: usize = {
            let l = rd.line()?;
            let mut it = l.split_whitespace();
            if (it.next(), it.next()) != (Some("vector"), Some("kappa_weights")) {
                return rd.err("expected kappa_weights vector");
            }
            rd.parse_tok(it.next())?
        };
        let kappa_weights = rd.float_row(kw_len)?;
        let kappa_bias: f64 = {
            let l = rd.line()?.to_string();
            match l.strip_prefix("scalar kappa_bias ") {
                Some(v) => rd.parse_tok(Some(v))?,
                None => return rd.err("expected kappa_bias"),
            }
        };
        let params = ModelParams {
            d,
            d_plm,
            adapter,
            layers,
            mu_head,
            kappa_weights,
            kappa_bias,
            kappa_max,
            identity_mu,
            constant_kappa,
        };
        let optimizer = if rd.peek() == Some("opt_begin") {
            rd.line()?;
            let adapter = rd.adam("adapter")?;
            let kappa = rd.adam("kappa")?;
            let layer_rows = rd.radam("layers")?;
            let mu_rows = rd.radam("mu_head")?;
            rd.expect("opt_end")?;
            Some(OptimizerSnapshot {
                adapter,
                kappa,
                layer_rows,
                mu_rows,
            })
        } else {
            None
        };
        Ok(Checkpoint {
            format_version,
            config_echo,
            params,
            optimizer,
        })
    }

    /// The configuration the checkpoint was produced with.
    pub fn config(&self) -> Result<RunConfig> {
        RunConfig::from_toml_str(&self.config_echo)
    }
}

/// Line cursor with positioned parse errors.
struct Reader<'a> {
    lines: Vec<&'a str>,
    pos: usize,
}

impl<'a> Reader<'a> {
    fn new(text: &'a str) -> Self {
        Reader {
            lines: text.lines().collect(),
            pos: 0,
        }
    }

    fn err<T>(&self, msg: impl Into<String>) -> Result<T> {
        Err(CoreError::Parse {
            path: "<checkpoint>".into(),
            line: self.pos,
            msg: msg.into(),
        })
    }

    fn line(&mut self) -> Result<&'a str> {
        match self.lines.get(self.pos) {
            Some(&l) => {
                self.pos += 1;
                Ok(l)
            }
            None => self.err("unexpected end of file"),
        }
    }

    fn peek(&self) -> Option<&'a str> {
        self.lines.get(self.pos).copied()
    }

    fn expect(&mut self, want: &str) -> Result<()> {
        let l = self.line()?;
        if l != want {
            return self.err(format!("expected `{want}`, found `{l}`"));
        }
        Ok(())
    }

    fn parse_tok<T: std::str::FromStr>(&self, tok: Option<&str>) -> Result<T> {
        match tok.and_then(|t| t.trim().parse().ok()) {
            Some(v) => Ok(v),
            None => self.err(format!("bad token `{}`", tok.unwrap_or("<missing>"))),
        }
    }

    fn kv<T: std::str::FromStr>(&mut self, key: &str) -> Result<T> {
        let l = self.line()?;
        let mut it = l.split_whitespace();
        if it.next() != Some(key) {
            return self.err(format!("expected key `{key}` in `{l}`"));
        }
        self.parse_tok(it.next())
    }

    fn float_row(&mut self, len: usize) -> Result<Vec<f64>> {
        let l = self.line()?;
        let row: Vec<f64> = l
            .split_whitespace()
            .map(|t| t.parse::<f64>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|_| CoreError::Parse {
                path: "<checkpoint>".into(),
                line: self.pos,
                msg: "bad float row".into(),
            })?;
        if row.len() != len {
            return self.err(format!("expected {len} floats, found {}", row.len()));
        }
        Ok(row)
    }

    fn matrix(&mut self, name: &str) -> Result<Vec<Vec<f64>>> {
        let l = self.line()?;
        let mut it = l.split_whitespace();
        if (it.next(), it.next()) != (Some("matrix"), Some(name)) {
            return self.err(format!("expected matrix `{name}` in `{l}`"));
        }
        let rows: usize = self.parse_tok(it.next())?;
        let cols: usize = self.parse_tok(it.next())?;
        (0..rows).map(|_| self.float_row(cols)).collect()
    }

    fn hyper(&self, toks: &mut dyn Iterator<Item = &str>) -> Result<AdamHyper> {
        if toks.next() != Some("hyper") {
            return self.err("expected hyper block");
        }
        Ok(AdamHyper {
            beta1: self.parse_tok(toks.next())?,
            beta2: self.parse_tok(toks.next())?,
            eta: self.parse_tok(toks.next())?,
            eps: self.parse_tok(toks.next())?,
        })
    }

    fn adam(&mut self, name: &str) -> Result<AdamState> {
        let l = self.line()?;
        let mut it = l.split_whitespace();
        if (it.next(), it.next()) != (Some("adam"), Some(name)) {
            return self.err(format!("expected adam `{name}` in `{l}`"));
        }
        let t: u64 = self.parse_tok(it.next())?;
        let len: usize = self.parse_tok(it.next())?;
        let hyper = self.hyper(&mut it)?;
        let m = self.float_row(len)?;
        let v = self.float_row(len)?;
        Ok(AdamState { m, v, t, hyper })
    }

    fn radam(&mut self, name: &str) -> Result<Vec<Vec<RiemannianAdamState>>> {
        let l = self.line()?;
        let mut it = l.split_whitespace();
        if (it.next(), it.next()) != (Some("radam"), Some(name)) {
            return self.err(format!("expected radam `{name}` in `{l}`"));
        }
        let n_mats: usize = self.parse_tok(it.next())?;
        let mut out = Vec::with_capacity(n_mats);
        for _ in 0..n_mats {
            let l = self.line()?;
            let mut it = l.split_whitespace();
            if it.next() != Some("rows") {
                return self.err(format!("expected rows header in `{l}`"));
            }
            let n_rows: usize = self.parse_tok(it.next())?;
            let dim: usize = self.parse_tok(it.next())?;
            let hyper = self.hyper(&mut it)?;
            let mut rows = Vec::with_capacity(n_rows);
            for _ in 0..n_rows {
                let l = self.line()?;
                let mut it = l.split_whitespace();
                if it.next() != Some("row") {
                    return self.err(format!("expected row in `{l}`"));
                }
                let t: u64 = self.parse_tok(it.next())?;
                let v: f64 = self.parse_tok(it.next())?;
                let m: Vec<f64> = it
                    .map(|tok| tok.parse::<f64>())
                    .collect::<std::result::Result<_, _>>()
                    .map_err(|_| CoreError::Parse {
                        path: "<checkpoint>".into(),
                        line: self.pos,
                        msg: "bad momentum row".into(),
                    })?;
                if m.len() != dim {
                    return self.err(format!("expected {dim} momentum entries"));
                }
                rows.push(RiemannianAdamState { m, v, t, hyper });
            }
            out.push(rows);
        }
        Ok(out)
    }
}
