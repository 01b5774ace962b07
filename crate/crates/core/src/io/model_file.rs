//! Text serialization of a [`CompositionalNet`].
//!
//! ```text
//! compnet-model 1
//! config <key> <value>            (zero or more, echoed verbatim)
//! bank <K> <D> <sigma>
//! <D floats>                      (K rows)
//! occluders <N> <K> <prior>
//! <K floats>                      (N rows)
//! classes <C>
//! class <label> <name>
//! part <ct|tl|br> <H> <W> <anchor row> <anchor col> <M> <context 0|1>
//! object <m>
//! <K floats>                      (H·W rows of logits)
//! context <m>                     (only when the part has context)
//! <K floats>                      (H·W rows)
//! end
//! ```
//!
//! Every float is written with 17 significant digits so values survive the
//! round trip exactly. Loading re-validates the whole model.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::mixture::MixtureCoefficients;
use crate::model::{ClassModel, CompositionalNet, Corner, PartModel};
use crate::occlusion::OccluderBank;
use crate::tensor::{Position, WindowShape};
use crate::vmf::VmfKernelBank;

pub const FORMAT_VERSION: u32 = 1;
const HEADER: &str = "compnet-model";

fn push_row(out: &mut String, row: &[f64]) {
    for (i, v) in row.iter().enumerate() {
        if i > 0 {
            out.push(' ');
        }
        write!(out, "{v:.16e}").expect("writing to a String");
    }
    out.push('\n');
}

/// Serialize `net` with an optional echo of the configuration that built it.
pub fn encode_model(net: &CompositionalNet, config: &[(String, String)]) -> String {
    let mut out = format!("{HEADER} {FORMAT_VERSION}\n");
    for (k, v) in config {
        writeln!(out, "config {k} {v}").expect("writing to a String");
    }
    let bank = &net.bank;
    writeln!(out, "bank {} {} {:.16e}", bank.k(), bank.depth(), bank.sigma()).expect("writing to a String");
    for row in bank.mus().chunks_exact(bank.depth()) {
        push_row(&mut out, row);
    }
    let occ = &net.occluders;
    writeln!(out, "occluders {} {} {:.16e}", occ.n(), occ.k(), occ.prior()).expect("writing to a String");
    for row in occ.betas().chunks_exact(occ.k()) {
        push_row(&mut out, row);
    }
    writeln!(out, "classes {}", net.classes.len()).expect("writing to a String");
    for class in &net.classes {
        writeln!(out, "class {} {}", class.label, class.name).expect("writing to a String");
        for (corner, part) in class.parts() {
            let s = part.shape;
            writeln!(
                out,
                "part {} {} {} {} {} {} {}",
                corner.tag(),
                s.height,
                s.width,
                s.anchor.row,
                s.anchor.col,
                part.m(),
                u8::from(part.context.is_some())
            )
            .expect("writing to a String");
            for m in 0..part.m() {
                writeln!(out, "object {m}").expect("writing to a String");
                for row in part.object[m].logits().chunks_exact(part.k()) {
                    push_row(&mut out, row);
                }
                if let Some(ctx) = part.context_of(m) {
                    writeln!(out, "context {m}").expect("writing to a String");
                    for row in ctx.logits().chunks_exact(part.k()) {
                        push_row(&mut out, row);
                    }
                }
            }
        }
    }
    out.push_str("end\n");
    out
}

struct Reader<'a> {
    lines: std::iter::Peekable<std::iter::Enumerate<std::str::Lines<'a>>>,
    path: PathBuf,
    line: usize,
}

impl<'a> Reader<'a> {
    fn err(&self, msg: impl std::fmt::Display) -> Error {
        Error::parse(&self.path, format!("line {}: {msg}", self.line))
    }

    fn next_line(&mut self) -> Result<&'a str> {
        match self.lines.next() {
            Some((i, l)) => {
                self.line = i + 1;
                Ok(l.trim())
            }
            None => Err(Error::parse(&self.path, "unexpected end of file")),
        }
    }

    fn peek_keyword(&mut self) -> Option<&'a str> {
        self.lines.peek().and_then(|(_, l)| l.split_whitespace().next())
    }

    /// A line that must start with `keyword`; returns the remaining fields.
    fn record(&mut self, keyword: &str) -> Result<Vec<&'a str>> {
        let line = self.next_line()?;
        let mut fields = line.split_whitespace();
        match fields.next() {
            Some(k) if k == keyword => Ok(fields.collect()),
            other => Err(self.err(format!("expected `{keyword}`, found {:?}", other.unwrap_or("")))),
        }
    }

    fn num<T: std::str::FromStr>(&self, field: Option<&&str>, what: &str) -> Result<T> {
        field.and_then(|s| s.parse().ok()).ok_or_else(|| self.err(format!("missing or malformed {what}")))
    }

    fn floats(&mut self, n: usize, rows: usize) -> Result<Vec<f64>> {
        let mut out = Vec::with_capacity(n * rows);
        for _ in 0..rows {
            let line = self.next_line()?;
            let before = out.len();
            for tok in line.split_whitespace() {
                let v: f64 = tok.parse().map_err(|_| self.err(format!("bad number {tok:?}")))?;
                out.push(v);
            }
            if out.len() - before != n {
                return Err(self.err(format!("expected {n} values, found {}", out.len() - before)));
            }
        }
        Ok(out)
    }
}

/// A decoded model file: the network and its echoed configuration.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelFile {
    pub net: CompositionalNet,
    pub config: Vec<(String, String)>,
}

pub fn decode_model(text: &str, origin: &Path) -> Result<ModelFile> {
    let mut r = Reader { lines: text.lines().enumerate().peekable(), path: origin.to_path_buf(), line: 0 };
    let head = r.record(HEADER)?;
    let version: u32 = r.num(head.first(), "format version")?;
    if version != FORMAT_VERSION {
        return Err(r.err(format!("unsupported model format {version}")));
    }
    let mut config = Vec::new();
    while r.peek_keyword() == Some("config") {
        let line = r.next_line()?;
        let rest = line["config".len()..].trim_start();
        let (k, v) = rest.split_once(char::is_whitespace).unwrap_or((rest, ""));
        config.push((k.to_string(), v.trim().to_string()));
    }

    let f = r.record("bank")?;
    let (k, d, sigma): (usize, usize, f64) = (r.num(f.first(), "K")?, r.num(f.get(1), "D")?, r.num(f.get(2), "sigma")?);
    let mus = r.floats(d, k)?;
    let bank = VmfKernelBank::new(mus, d, sigma).map_err(|e| r.err(e))?;

    let f = r.record("occluders")?;
    let (n, ok, prior): (usize, usize, f64) =
        (r.num(f.first(), "N")?, r.num(f.get(1), "K")?, r.num(f.get(2), "prior")?);
    let betas = r.floats(ok, n)?;
    let occluders = OccluderBank::new(ok, betas, prior).map_err(|e| r.err(e))?;

    let f = r.record("classes")?;
    let c: usize = r.num(f.first(), "class count")?;
    let mut classes = Vec::with_capacity(c);
    for _ in 0..c {
        let line = r.next_line()?;
        let rest = line.strip_prefix("class").ok_or_else(|| r.err("expected `class`"))?.trim();
        let (label, name) = rest.split_once(char::is_whitespace).unwrap_or((rest, ""));
        let label: usize = label.parse().map_err(|_| r.err("bad class label"))?;
        let mut parts: Vec<(Corner, PartModel)> = Vec::new();
        while r.peek_keyword() == Some("part") {
            let f = r.record("part")?;
            let corner = f.first().and_then(|t| Corner::from_tag(t)).ok_or_else(|| r.err("bad part tag"))?;
            let (h, w): (usize, usize) = (r.num(f.get(1), "H")?, r.num(f.get(2), "W")?);
            let anchor = Position::new(r.num(f.get(3), "anchor row")?, r.num(f.get(4), "anchor col")?);
            let m: usize = r.num(f.get(5), "M")?;
            let has_ctx: u8 = r.num(f.get(6), "context flag")?;
            let mut object = Vec::with_capacity(m);
            let mut context = Vec::new();
            for i in 0..m {
                let idx: usize = {
                    let f = r.record("object")?;
                    r.num(f.first(), "mixture index")?
                };
                if idx != i {
                    return Err(r.err(format!("object mixture {idx} out of order")));
                }
                let logits = r.floats(k, h * w)?;
                object.push(MixtureCoefficients::from_logits(h, w, k, logits).map_err(|e| r.err(e))?);
                if has_ctx == 1 {
                    let idx: usize = {
                        let f = r.record("context")?;
                        r.num(f.first(), "mixture index")?
                    };
                    if idx != i {
                        return Err(r.err(format!("context mixture {idx} out of order")));
                    }
                    let logits = r.floats(k, h * w)?;
                    context.push(MixtureCoefficients::from_logits(h, w, k, logits).map_err(|e| r.err(e))?);
                }
            }
            let shape = WindowShape { height: h, width: w, anchor };
            let part = PartModel::new(shape, object, (has_ctx == 1).then_some(context)).map_err(|e| r.err(e))?;
            parts.push((corner, part));
        }
        let tags: Vec<Corner> = parts.iter().map(|(c, _)| *c).collect();
        let mut it = parts.into_iter().map(|(_, p)| p);
        let class = match tags.as_slice() {
            [Corner::Center] => {
                ClassModel { label, name: name.trim().to_string(), center: it.next().expect("one part"), corners: None }
            }
            [Corner::Center, Corner::TopLeft, Corner::BottomRight] => {
                let (center, tl, br) = (it.next(), it.next(), it.next());
                ClassModel {
                    label,
                    name: name.trim().to_string(),
                    center: center.expect("three parts"),
                    corners: Some((tl.expect("three parts"), br.expect("three parts"))),
                }
            }
            _ => return Err(r.err(format!("class {label} has parts {tags:?}, expected ct or ct tl br"))),
        };
        classes.push(class);
    }
    r.record("end")?;
    let net = CompositionalNet::new(bank, classes, occluders).map_err(|e| Error::parse(origin, e.to_string()))?;
    Ok(ModelFile { net, config })
}

pub fn write_model(path: &Path, net: &CompositionalNet, config: &[(String, String)]) -> Result<()> {
    std::fs::write(path, encode_model(net, config)).map_err(|e| Error::io(path, e))
}

pub fn read_model(path: &Path) -> Result<ModelFile> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    decode_model(&text, path)
}
