//! Textual policy checkpoints.
//!
//! ```text
//! copos-policy 1
//! kind gaussian            (or softmax)
//! storage diagonal         (gaussian only; or dense)
//! features mlp 3 linear    (layer count, output activation; or `features identity <dim>`)
//! tensor features.W0 32 15
//! <one line per row, values separated by spaces>
//! ...
//! tensor U 10 2
//! tensor Lambda_diag 2 1   (Lambda k k for dense; Theta_out for softmax)
//! ```
//!
//! Values are written in shortest round-trip exponent form, so reading a
//! checkpoint back reproduces every parameter bit for bit.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::path::Path;

use nalgebra::{DMatrix, DVector};

use super::{Dense, FeatureMap, Mlp, NaturalGaussianPolicy, Policy, PrecisionStorage, SoftmaxPolicy};
use crate::error::{Error, Result};

const MAGIC: &str = "copos-policy";
const VERSION: u32 = 1;

fn push_tensor(out: &mut String, name: &str, m: &DMatrix<f64>) {
    writeln!(out, "tensor {name} {} {}", m.nrows(), m.ncols()).unwrap();
    for r in 0..m.nrows() {
        let row: Vec<String> = m.row(r).iter().map(|v| format!("{v:e}")).collect();
        out.push_str(&row.join(" "));
        out.push('\n');
    }
}

pub fn encode(policy: &Policy) -> String {
    let mut out = format!("{MAGIC} {VERSION}\n");
    match policy {
        Policy::Gaussian(_) => out.push_str("kind gaussian\n"),
        Policy::Softmax(_) => out.push_str("kind softmax\n"),
    }
    if let Policy::Gaussian(p) = policy {
        let storage = match p.storage() {
            PrecisionStorage::Diagonal => "diagonal",
            PrecisionStorage::Dense => "dense",
        };
        writeln!(out, "storage {storage}").unwrap();
    }
    match policy.features() {
        FeatureMap::Identity { dim } => writeln!(out, "features identity {dim}").unwrap(),
        FeatureMap::Mlp(m) => {
            let act = if m.linear_output() { "linear" } else { "tanh" };
            writeln!(out, "features mlp {} {act}", m.layers().len()).unwrap();
            for (i, l) in m.layers().iter().enumerate() {
                push_tensor(&mut out, &format!("features.W{i}"), &l.weight);
                push_tensor(
                    &mut out,
                    &format!("features.b{i}"),
                    &DMatrix::from_column_slice(l.bias.len(), 1, l.bias.as_slice()),
                );
            }
        }
    }
    match policy {
        Policy::Gaussian(p) => {
            push_tensor(&mut out, "U", p.u());
            match p.storage() {
                PrecisionStorage::Diagonal => {
                    let d = p.precision().diagonal();
                    push_tensor(&mut out, "Lambda_diag", &DMatrix::from_column_slice(d.len(), 1, d.as_slice()));
                }
                PrecisionStorage::Dense => push_tensor(&mut out, "Lambda", p.precision()),
            }
        }
        Policy::Softmax(p) => push_tensor(&mut out, "Theta_out", p.theta()),
    }
    out
}

fn bad(msg: impl Into<String>) -> Error {
    Error::Checkpoint(msg.into())
}

struct Parsed<'a> {
    header: HashMap<&'a str, Vec<&'a str>>,
    tensors: HashMap<String, DMatrix<f64>>,
}

fn parse(text: &str) -> Result<Parsed<'_>> {
    let mut lines = text.lines().filter(|l| !l.trim().is_empty());
    let first = lines.next().ok_or_else(|| bad("empty checkpoint"))?;
    let mut head = first.split_whitespace();
    if head.next() != Some(MAGIC) {
        return Err(bad("missing header"));
    }
    let version: u32 = head.next().and_then(|v| v.parse().ok()).ok_or_else(|| bad("missing version"))?;
    if version != VERSION {
        return Err(bad(format!("unsupported version {version}")));
    }
    let mut header = HashMap::new();
    let mut tensors = HashMap::new();
    while let Some(line) = lines.next() {
        let mut parts = line.split_whitespace();
        let key = parts.next().unwrap();
        if key != "tensor" {
            header.insert(key, parts.collect());
            continue;
        }
        let name = parts.next().ok_or_else(|| bad("tensor without name"))?.to_string();
        let mut dim = || -> Result<usize> {
            parts.next().and_then(|v| v.parse().ok()).ok_or_else(|| bad(format!("bad shape for {name}")))
        };
        let (rows, cols) = (dim()?, dim()?);
        let mut data = Vec::with_capacity(rows * cols);
        for _ in 0..rows {
            let row = lines.next().ok_or_else(|| bad(format!("truncated tensor {name}")))?;
            for tok in row.split_whitespace() {
                data.push(tok.parse::<f64>().map_err(|e| bad(format!("{name}: {e}")))?);
            }
        }
        if data.len() != rows * cols {
            return Err(bad(format!("{name}: expected {} values, got {}", rows * cols, data.len())));
        }
        tensors.insert(name, DMatrix::from_row_slice(rows, cols, &data));
    }
    Ok(Parsed { header, tensors })
}

impl Parsed<'_> {
    fn field(&self, key: &str) -> Result<&[&str]> {
        self.header.get(key).map(|v| v.as_slice()).ok_or_else(|| bad(format!("missing `{key}`")))
    }

    fn take(&mut self, name: &str) -> Result<DMatrix<f64>> {
        self.tensors.remove(name).ok_or_else(|| bad(format!("missing tensor {name}")))
    }
}

pub fn decode(text: &str) -> Result<Policy> {
    let mut p = parse(text)?;
    let features = match p.field("features")? {
        ["identity", dim] => FeatureMap::identity(dim.parse().map_err(|_| bad("bad identity dimension"))?),
        ["mlp", n, act] => {
            let n: usize = n.parse().map_err(|_| bad("bad layer count"))?;
            let linear_output = match *act {
                "linear" => true,
                "tanh" => false,
                other => return Err(bad(format!("unknown output activation {other}"))),
            };
            let mut layers = Vec::with_capacity(n);
            for i in 0..n {
                let weight = p.take(&format!("features.W{i}"))?;
                let bias = p.take(&format!("features.b{i}"))?;
                layers.push(Dense { weight, bias: DVector::from_column_slice(bias.as_slice()) });
            }
            FeatureMap::Mlp(Mlp::from_layers(layers, linear_output)?)
        }
        other => return Err(bad(format!("bad features line {other:?}"))),
    };
    let policy = match p.field("kind")? {
        ["gaussian"] => {
            let u = p.take("U")?;
            let g = match p.field("storage")? {
                ["diagonal"] => {
                    let d = p.take("Lambda_diag")?;
                    NaturalGaussianPolicy::new_diagonal(features, u, d.as_slice())?
                }
                ["dense"] => {
                    let lambda = p.take("Lambda")?;
                    NaturalGaussianPolicy::new(features, u, lambda, PrecisionStorage::Dense)?
                }
                other => return Err(bad(format!("bad storage {other:?}"))),
            };
            Policy::Gaussian(g)
        }
        ["softmax"] => Policy::Softmax(SoftmaxPolicy::new(features, p.take("Theta_out")?)?),
        other => return Err(bad(format!("bad kind {other:?}"))),
    };
    if let Some(name) = p.tensors.keys().next() {
        return Err(bad(format!("unexpected tensor {name}")));
    }
    Ok(policy)
}

pub fn save(policy: &Policy, path: &Path) -> Result<()> {
    std::fs::write(path, encode(policy))?;
    Ok(())
}

pub fn load(path: &Path) -> Result<Policy> {
    decode(&std::fs::read_to_string(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn bits(p: &Policy) -> Vec<u64> {
        p.params().iter().map(|v| v.to_bits()).collect()
    }

    proptest! {
        #[test]
        fn round_trip_is_bit_exact(seed in any::<u64>(), scale in 1e-8f64..1e8, dense in any::<bool>()) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let feats = FeatureMap::mlp(&[3, 4, 2], true, &mut rng).unwrap();
            let u = DMatrix::from_fn(2, 2, |i, j| scale * ((i + 2 * j) as f64 + 0.1).sin());
            let storage = if dense { PrecisionStorage::Dense } else { PrecisionStorage::Diagonal };
            let lambda = if dense {
                DMatrix::from_row_slice(2, 2, &[scale, 0.1 * scale, 0.1 * scale, 2.0 * scale])
            } else {
                DMatrix::from_diagonal(&DVector::from_vec(vec![scale, 1.0 / 3.0]))
            };
            let g = Policy::Gaussian(NaturalGaussianPolicy::new(feats.clone(), u, lambda, storage).unwrap());
            let back = decode(&encode(&g)).unwrap();
            prop_assert_eq!(bits(&g), bits(&back));
            prop_assert_eq!(g, back);

            let theta = DMatrix::from_fn(3, 2, |i, j| scale * ((3 * i + j) as f64).cos() / 7.0);
            let s = Policy::Softmax(SoftmaxPolicy::new(feats, theta).unwrap());
            prop_assert_eq!(bits(&s), bits(&decode(&encode(&s)).unwrap()));
        }
    }

    #[test]
    fn identity_features_round_trip() {
        let p = Policy::Gaussian(
            NaturalGaussianPolicy::new_diagonal(FeatureMap::identity(1), DMatrix::from_element(1, 1, 0.1), &[1.0])
                .unwrap(),
        );
        assert_eq!(decode(&encode(&p)).unwrap(), p);
    }

    #[test]
    fn rejects_wrong_version_and_truncation() {
        let p = Policy::Softmax(SoftmaxPolicy::uniform(FeatureMap::identity(2), 3).unwrap());
        let text = encode(&p);
        assert!(decode(&text.replace("copos-policy 1", "copos-policy 9")).is_err());
        let truncated: String = text.lines().take(4).collect::<Vec<_>>().join("\n");
        assert!(decode(&truncated).is_err());
    }
}
