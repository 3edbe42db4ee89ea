//! Network checkpoints: a self-describing text blob, magic header "SUQNET1".
//!
//! Floats are written with Rust's shortest round-trip formatting, so a
//! save/load/save cycle is byte-identical.

use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::nn::{DenseLayer, DropoutSpec, Layer, Network, VariationalDenseLayer};
use std::io::{BufRead, Write};
use std::path::Path;

const MAGIC: &str = "SUQNET1";

pub fn save_network(net: &Network, w: &mut impl Write) -> Result<()> {
    writeln!(w, "{MAGIC}")?;
    writeln!(w, "input_dim {}", net.input_dim())?;
    writeln!(w, "layers {}", net.layers().len())?;
    for layer in net.layers() {
        match layer {
            Layer::Dense(d) => {
                writeln!(w, "dense {} {}", d.out_dim(), d.in_dim())?;
                write_floats(w, d.weights.data())?;
                write_floats(w, &d.bias)?;
            }
            Layer::Variational(v) => {
                writeln!(
                    w,
                    "variational {} {} {}",
                    v.out_dim(),
                    v.in_dim(),
                    v.prior_weight
                )?;
                write_floats(w, v.weight_mean.data())?;
                write_floats(w, v.weight_rho.data())?;
                write_floats(w, &v.bias_mean)?;
                write_floats(w, &v.bias_rho)?;
            }
            Layer::Relu => writeln!(w, "relu")?,
            Layer::Dropout(d) => writeln!(w, "dropout {}", d.p())?,
        }
    }
    Ok(())
}

pub fn load_network(r: &mut impl BufRead) -> Result<Network> {
    let mut lines = Lines::new(r)?;
    let magic = lines.next()?;
    if magic != MAGIC {
        return Err(Error::parse(
            1,
            format!("expected header {MAGIC}, got {magic:?}"),
        ));
    }
    let input_dim: usize = lines.field("input_dim")?;
    let num_layers: usize = lines.field("layers")?;
    let mut layers = Vec::with_capacity(num_layers);
    for _ in 0..num_layers {
        let line_no = lines.line_no + 1;
        let header = lines.next()?;
        let mut parts = header.split_whitespace();
        let kind = parts.next().unwrap_or("");
        match kind {
            "dense" => {
                let (out, inp) = two_dims(&mut parts, line_no)?;
                let w = Matrix::from_vec(out, inp, lines.floats(out * inp)?)?;
                let b = lines.floats(out)?;
                layers.push(Layer::Dense(DenseLayer::new(w, b)?));
            }
            "variational" => {
                let (out, inp) = two_dims(&mut parts, line_no)?;
                let beta: f64 = parse_next(&mut parts, line_no, "prior_weight")?;
                let w_mu = Matrix::from_vec(out, inp, lines.floats(out * inp)?)?;
                let w_rho = Matrix::from_vec(out, inp, lines.floats(out * inp)?)?;
                let b_mu = lines.floats(out)?;
                let b_rho = lines.floats(out)?;
                layers.push(Layer::Variational(VariationalDenseLayer::new(
                    w_mu, w_rho, b_mu, b_rho, beta,
                )?));
            }
            "relu" => layers.push(Layer::Relu),
            "dropout" => {
                let p: f64 = parse_next(&mut parts, line_no, "p")?;
                layers.push(Layer::Dropout(DropoutSpec::new(p)?));
            }
            other => {
                return Err(Error::parse(
                    line_no,
                    format!("unknown layer kind {other:?}"),
                ));
            }
        }
    }
    Network::from_layers(input_dim, layers)
}

pub fn save_network_file(net: &Network, path: &Path) -> Result<()> {
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    save_network(net, &mut f)
}

pub fn load_network_file(path: &Path) -> Result<Network> {
    let mut f = std::io::BufReader::new(std::fs::File::open(path)?);
    load_network(&mut f)
}

fn write_floats(w: &mut impl Write, vals: &[f64]) -> Result<()> {
    let mut first = true;
    for v in vals {
        if first {
            write!(w, "{v}")?;
            first = false;
        } else {
            write!(w, " {v}")?;
        }
    }
    writeln!(w)?;
    Ok(())
}

fn two_dims<'a>(parts: &mut impl Iterator<Item = &'a str>, line: usize) -> Result<(usize, usize)> {
    let out = parse_next(parts, line, "out_dim")?;
    let inp = parse_next(parts, line, "in_dim")?;
    Ok((out, inp))
}

fn parse_next<'a, T: std::str::FromStr>(
    parts: &mut impl Iterator<Item = &'a str>,
    line: usize,
    what: &str,
) -> Result<T> {
    parts
        .next()
        .ok_or_else(|| Error::parse(line, format!("missing {what}")))?
        .parse()
        .map_err(|_| Error::parse(line, format!("bad {what}")))
}

struct Lines {
    buf: Vec<String>,
    at: usize,
    line_no: usize,
}

impl Lines {
    fn new(r: &mut impl BufRead) -> Result<Self> {
        let mut buf = Vec::new();
        for line in r.lines() {
            buf.push(line?);
        }
        Ok(Lines {
            buf,
            at: 0,
            line_no: 0,
        })
    }

    fn next(&mut self) -> Result<String> {
        if self.at >= self.buf.len() {
            return Err(Error::parse(
                self.line_no + 1,
                "unexpected end of checkpoint",
            ));
        }
        self.line_no += 1;
        let s = self.buf[self.at].clone();
        self.at += 1;
        Ok(s)
    }

    fn field<T: std::str::FromStr>(&mut self, name: &str) -> Result<T> {
        let line = self.next()?;
        let mut parts = line.split_whitespace();
        let key = parts.next().unwrap_or("");
        if key != name {
            return Err(Error::parse(
                self.line_no,
                format!("expected {name}, got {key:?}"),
            ));
        }
        parse_next(&mut parts, self.line_no, name)
    }

    fn floats(&mut self, n: usize) -> Result<Vec<f64>> {
        let line = self.next()?;
        let vals: std::result::Result<Vec<f64>, _> =
            line.split_whitespace().map(str::parse).collect();
        let vals = vals.map_err(|_| Error::parse(self.line_no, "bad float"))?;
        if vals.len() != n {
            return Err(Error::parse(
                self.line_no,
                format!("expected {n} floats, got {}", vals.len()),
            ));
        }
        Ok(vals)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::DenseKind;
    use crate::rng::rng_from_seed;

    #[test]
    fn roundtrip_is_byte_identical() {
        let mut rng = rng_from_seed(44);
        let net = Network::mlp(
            5,
            &[9, 4],
            3,
            DenseKind::Variational {
                prior_weight: 0.3,
                rho_init: -2.5,
            },
            Some(0.3),
            &mut rng,
        )
        .unwrap();
        let mut blob = Vec::new();
        save_network(&net, &mut blob).unwrap();
        let loaded = load_network(&mut blob.as_slice()).unwrap();
        assert_eq!(loaded.get_params(), net.get_params());
        let mut blob2 = Vec::new();
        save_network(&loaded, &mut blob2).unwrap();
        assert_eq!(blob, blob2);
    }

    #[test]
    fn loaded_network_predicts_identically() {
        let mut rng = rng_from_seed(45);
        let net = Network::mlp(4, &[8], 2, DenseKind::Deterministic, None, &mut rng).unwrap();
        let x = crate::linalg::Matrix::from_rows(&[vec![0.1, -0.4, 2.0, 0.7]]).unwrap();
        let mut blob = Vec::new();
        save_network(&net, &mut blob).unwrap();
        let loaded = load_network(&mut blob.as_slice()).unwrap();
        assert_eq!(
            net.forward_eval(&x).unwrap().data(),
            loaded.forward_eval(&x).unwrap().data()
        );
    }

    #[test]
    fn rejects_wrong_magic() {
        let blob = b"NOTANET\ninput_dim 2\nlayers 0\n";
        let err = load_network(&mut blob.as_slice()).unwrap_err();
        assert!(matches!(err, Error::Parse { line: 1, .. }));
    }

    #[test]
    fn rejects_truncated_blob() {
        let mut rng = rng_from_seed(46);
        let net = Network::mlp(3, &[4], 2, DenseKind::Deterministic, None, &mut rng).unwrap();
        let mut blob = Vec::new();
        save_network(&net, &mut blob).unwrap();
        blob.truncate(blob.len() / 2);
        // Depending on where the cut lands this is a parse error; it must not panic.
        assert!(load_network(&mut blob.as_slice()).is_err());
    }
}
