//! Plain-text network checkpoints.
//!
//! Layout, one item per line:
//!
//! ```text
//! hess-mlp 1
//! sizes <n0> <n1> ... <nk>
//! activations <hidden> <output>
//! <layer 0 weights, row-major, space separated>
//! <layer 0 biases>
//! ...
//! ```
//!
//! Values use Rust's shortest round-trip float formatting, so a reload is bit-exact.

use std::fmt::Write as _;
use std::path::Path;

use ndarray::{Array1, Array2};

use crate::error::{Error, Result};

use super::mlp::{Activation, Dense, Mlp};

pub const FORMAT_TAG: &str = "hess-mlp";
pub const FORMAT_VERSION: u32 = 1;

pub fn to_text(net: &Mlp) -> String {
    let mut out = String::new();
    writeln!(out, "{FORMAT_TAG} {FORMAT_VERSION}").unwrap();
    let sizes: Vec<String> = net.layer_sizes().iter().map(|s| s.to_string()).collect();
    writeln!(out, "sizes {}", sizes.join(" ")).unwrap();
    writeln!(
        out,
        "activations {} {}",
        net.hidden_activation().name(),
        net.output_activation().name()
    )
    .unwrap();
    for layer in net.layers() {
        write_values(&mut out, layer.weight.iter());
        write_values(&mut out, layer.bias.iter());
    }
    out
}

fn write_values<'a>(out: &mut String, values: impl Iterator<Item = &'a f64>) {
    let parts: Vec<String> = values.map(|v| format!("{v:?}")).collect();
    out.push_str(&parts.join(" "));
    out.push('\n');
}

pub fn from_text(text: &str) -> Result<Mlp> {
    let mut lines = text.lines();
    let header = lines.next().ok_or_else(|| fmt_err("empty checkpoint"))?;
    let mut head = header.split_whitespace();
    if head.next() != Some(FORMAT_TAG) {
        return Err(fmt_err("missing format tag"));
    }
    let version: u32 = parse_token(head.next(), "version")?;
    if version != FORMAT_VERSION {
        return Err(fmt_err(&format!("unsupported version {version}")));
    }
    let sizes_line = lines.next().ok_or_else(|| fmt_err("missing sizes line"))?;
    let mut parts = sizes_line.split_whitespace();
    if parts.next() != Some("sizes") {
        return Err(fmt_err("expected sizes line"));
    }
    let sizes = parts
        .map(|p| parse_token(Some(p), "layer size"))
        .collect::<Result<Vec<usize>>>()?;
    let act_line = lines.next().ok_or_else(|| fmt_err("missing activations line"))?;
    let mut parts = act_line.split_whitespace();
    if parts.next() != Some("activations") {
        return Err(fmt_err("expected activations line"));
    }
    let hidden = parts
        .next()
        .and_then(Activation::parse)
        .ok_or_else(|| fmt_err("bad hidden activation"))?;
    let output = parts
        .next()
        .and_then(Activation::parse)
        .ok_or_else(|| fmt_err("bad output activation"))?;
    if sizes.len() < 2 {
        return Err(fmt_err("need at least two layer sizes"));
    }
    let mut layers = Vec::new();
    for w in sizes.windows(2) {
        let (input, output_dim) = (w[0], w[1]);
        let weights = parse_row(lines.next(), input * output_dim)?;
        let biases = parse_row(lines.next(), output_dim)?;
        layers.push(Dense {
            weight: Array2::from_shape_vec((output_dim, input), weights)
                .map_err(|e| fmt_err(&e.to_string()))?,
            bias: Array1::from(biases),
        });
    }
    Mlp::from_layers(layers, hidden, output)
}

pub fn save(net: &Mlp, path: &Path) -> Result<()> {
    std::fs::write(path, to_text(net))?;
    Ok(())
}

pub fn load(path: &Path) -> Result<Mlp> {
    from_text(&std::fs::read_to_string(path)?)
}

fn parse_row(line: Option<&str>, expected: usize) -> Result<Vec<f64>> {
    let line = line.ok_or_else(|| fmt_err("truncated parameter block"))?;
    let values = line
        .split_whitespace()
        .map(|t| parse_token(Some(t), "parameter"))
        .collect::<Result<Vec<f64>>>()?;
    if values.len() != expected {
        return Err(fmt_err(&format!(
            "expected {expected} values, found {}",
            values.len()
        )));
    }
    if values.iter().any(|v| !v.is_finite()) {
        return Err(fmt_err("non-finite parameter"));
    }
    Ok(values)
}

fn parse_token<T: std::str::FromStr>(tok: Option<&str>, what: &str) -> Result<T> {
    tok.and_then(|t| t.parse().ok())
        .ok_or_else(|| fmt_err(&format!("could not parse {what}")))
}

fn fmt_err(msg: &str) -> Error {
    Error::Format(msg.to_string())
}
