//! Architecture strings such as `BTN-(150)-(50)-(150*)-BTN*`.
//!
//! Tokens are separated by `-`: `BTN`, `BN` or `(n)` for a dense layer of `n`
//! units, each optionally marked `*` for its decoder mirror. The last unmarked
//! token is the dense bottleneck; the marked suffix must mirror the encoder
//! before it in reverse order. The bottleneck's own mirror is implicit, so the
//! decoder is the exact reverse of the encoder and ends in a linear dense layer
//! that restores the window width.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::LayerSpec;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum TokenKind {
    Btn,
    Bn,
    Dense(usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Token {
    pub kind: TokenKind,
    pub reverse: bool,
}

impl fmt::Display for Token {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let star = if self.reverse { "*" } else { "" };
        match self.kind {
            TokenKind::Btn => write!(f, "BTN{star}"),
            TokenKind::Bn => write!(f, "BN{star}"),
            TokenKind::Dense(n) => write!(f, "({n}{star})"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum ArchitectureSpec {
    /// Mirrored stack of dense and normalization layers with ReLU activations.
    Stack(Vec<Token>),
    /// Linear single-hidden-layer autoencoder, optionally wrapped in BTN.
    Pca { units: usize, temporal_norm: bool },
}

/// The ten models compared in the reference ablation table.
pub const REFERENCE_ARCHITECTURES: [&str; 10] = [
    "PCA-network (50)",
    "PCA-network (50) with BTN",
    "(150)-(50)-(150*)",
    "(150)-BN-(50)-BN*-(150*)",
    "BN-(150)-(50)-(150*)-BN*",
    "BTN-(150)-(50)-(150*)-BTN*",
    "BTN-(150)-BN-(50)-BN*-(150*)-BTN*",
    "BN-(500)-(300)-(150)-(300*)-(500*)-BN*",
    "BTN-(500)-(300)-(150)-(300*)-(500*)-BTN*",
    "BTN-(500)-BN-(300)-(150)-(300*)-BN*-(500*)-BTN*",
];

/// The detector used for reports unless another architecture is given.
pub const DEFAULT_ARCHITECTURE: &str = "BTN-(150)-(50)-(150*)-BTN*";

fn parse_error(position: usize, message: impl Into<String>) -> Error {
    Error::Architecture {
        position,
        message: message.into(),
    }
}

fn parse_units(text: &str, position: usize) -> Result<usize> {
    match text.trim().parse::<usize>() {
        Ok(0) => Err(parse_error(position, "dense layer needs at least one unit")),
        Ok(n) => Ok(n),
        Err(_) => Err(parse_error(position, format!("invalid unit count {text:?}"))),
    }
}

fn parse_token(raw: &str, position: usize) -> Result<Token> {
    let text = raw.trim();
    let (body, mut reverse) = match text.strip_suffix('*') {
        Some(body) => (body.trim_end(), true),
        None => (text, false),
    };
    let kind = if body.eq_ignore_ascii_case("BTN") {
        TokenKind::Btn
    } else if body.eq_ignore_ascii_case("BN") {
        TokenKind::Bn
    } else if let Some(inner) = body.strip_prefix('(').and_then(|b| b.strip_suffix(')')) {
        let inner = match inner.trim().strip_suffix('*') {
            Some(units) if !reverse => {
                reverse = true;
                units
            }
            Some(_) => return Err(parse_error(position, format!("doubled `*` in {text:?}"))),
            None => inner,
        };
        TokenKind::Dense(parse_units(inner, position)?)
    } else {
        return Err(parse_error(position, format!("unknown token {text:?}")));
    };
    Ok(Token { kind, reverse })
}

fn parse_pca(text: &str) -> Option<Result<ArchitectureSpec>> {
    let rest = text.strip_prefix("PCA-network")?.trim_start();
    let (units_part, temporal_norm) = match rest.strip_suffix("with BTN") {
        Some(units) => (units.trim_end(), true),
        None => (rest, false),
    };
    let inner = units_part.strip_prefix('(').and_then(|u| u.strip_suffix(')'));
    Some(match inner {
        Some(inner) => parse_units(inner, 0).map(|units| ArchitectureSpec::Pca { units, temporal_norm }),
        None => Err(parse_error(0, format!("expected `PCA-network (n)`, found {text:?}"))),
    })
}

pub fn parse_architecture(text: &str) -> Result<ArchitectureSpec> {
    let text = text.trim();
    if let Some(pca) = parse_pca(text) {
        return pca;
    }
    if text.is_empty() {
        return Err(parse_error(0, "empty architecture"));
    }
    let tokens = text
        .split('-')
        .enumerate()
        .map(|(i, raw)| parse_token(raw, i))
        .collect::<Result<Vec<_>>>()?;

    let split = tokens.iter().position(|t| t.reverse).unwrap_or(tokens.len());
    if let Some(offset) = tokens[split..].iter().position(|t| !t.reverse) {
        return Err(parse_error(
            split + offset,
            format!("encoder token {} after the decoder started", tokens[split + offset]),
        ));
    }
    let (encoder, decoder) = tokens.split_at(split);
    let Some((bottleneck, mirrored)) = encoder.split_last() else {
        return Err(parse_error(0, "decoder without an encoder"));
    };
    if !matches!(bottleneck.kind, TokenKind::Dense(_)) {
        return Err(parse_error(
            split - 1,
            format!("the last encoder token must be a dense bottleneck, found {bottleneck}"),
        ));
    }
    for (i, expected) in mirrored.iter().rev().enumerate() {
        match decoder.get(i) {
            Some(found) if found.kind == expected.kind => {}
            Some(found) => {
                return Err(parse_error(
                    split + i,
                    format!("decoder token {found} does not mirror {expected}*"),
                ))
            }
            None => {
                return Err(parse_error(
                    tokens.len(),
                    format!("missing decoder mirror {}", Token { reverse: true, ..*expected }),
                ))
            }
        }
    }
    if decoder.len() > mirrored.len() {
        return Err(parse_error(
            split + mirrored.len(),
            format!("decoder token {} has no encoder counterpart", decoder[mirrored.len()]),
        ));
    }
    Ok(ArchitectureSpec::Stack(tokens))
}

impl ArchitectureSpec {
    /// Layer list for the network, with ReLU after every dense layer except the output.
    pub fn layer_specs(&self) -> Vec<LayerSpec> {
        match self {
            ArchitectureSpec::Pca { units, temporal_norm } => {
                let mut specs = vec![LayerSpec::Dense(*units), LayerSpec::DenseReverse(*units)];
                if *temporal_norm {
                    specs.insert(0, LayerSpec::TemporalNorm);
                    specs.push(LayerSpec::TemporalNormReverse);
                }
                specs
            }
            ArchitectureSpec::Stack(tokens) => {
                let mut core = Vec::new();
                let mut last_dense = 0;
                for (i, t) in tokens.iter().enumerate() {
                    let spec = match (t.kind, t.reverse) {
                        (TokenKind::Btn, false) => LayerSpec::TemporalNorm,
                        (TokenKind::Btn, true) => LayerSpec::TemporalNormReverse,
                        (TokenKind::Bn, false) => LayerSpec::BatchNorm,
                        (TokenKind::Bn, true) => LayerSpec::BatchNormReverse,
                        (TokenKind::Dense(n), false) => LayerSpec::Dense(n),
                        (TokenKind::Dense(n), true) => LayerSpec::DenseReverse(n),
                    };
                    core.push(spec);
                    let next_is_decoder = tokens.get(i + 1).is_none_or(|n| n.reverse);
                    if let (TokenKind::Dense(n), false, true) = (t.kind, t.reverse, next_is_decoder) {
                        core.push(LayerSpec::DenseReverse(n));
                    }
                }
                for (i, spec) in core.iter().enumerate() {
                    if matches!(spec, LayerSpec::Dense(_) | LayerSpec::DenseReverse(_)) {
                        last_dense = i;
                    }
                }
                let mut specs = Vec::with_capacity(core.len() * 2);
                for (i, spec) in core.into_iter().enumerate() {
                    let dense = matches!(spec, LayerSpec::Dense(_) | LayerSpec::DenseReverse(_));
                    specs.push(spec);
                    if dense && i != last_dense {
                        specs.push(LayerSpec::Relu);
                    }
                }
                specs
            }
        }
    }

    pub fn uses_temporal_norm(&self) -> bool {
        match self {
            ArchitectureSpec::Pca { temporal_norm, .. } => *temporal_norm,
            ArchitectureSpec::Stack(tokens) => tokens.iter().any(|t| t.kind == TokenKind::Btn),
        }
    }
}

impl fmt::Display for ArchitectureSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ArchitectureSpec::Pca { units, temporal_norm } => {
                write!(f, "PCA-network ({units})")?;
                if *temporal_norm {
                    write!(f, " with BTN")?;
                }
                Ok(())
            }
            ArchitectureSpec::Stack(tokens) => {
                for (i, t) in tokens.iter().enumerate() {
                    if i > 0 {
                        f.write_str("-")?;
                    }
                    write!(f, "{t}")?;
                }
                Ok(())
            }
        }
    }
}

impl FromStr for ArchitectureSpec {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        parse_architecture(s)
    }
}

impl Serialize for ArchitectureSpec {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        serializer.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for ArchitectureSpec {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        let text = String::deserialize(deserializer)?;
        parse_architecture(&text).map_err(serde::de::Error::custom)
    }
}
