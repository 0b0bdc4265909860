use serde::{Deserialize, Serialize};

use super::trainer::{train, TrainConfig, TrainReport};
use crate::data::Sample;
use crate::error::{Error, Result};
use crate::eval::ForecastData;
use crate::model::{Model, ModelConfig, ParameterSet};

/// Which source parameters seed the target model.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub enum TransferScope {
    /// Every parameter and buffer.
    #[default]
    #[serde(rename = "all")]
    All,
    /// Only ε and the convolution filters; read-out and batch norm start fresh.
    #[serde(rename = "tcn-eps")]
    TcnEps,
}

impl std::str::FromStr for TransferScope {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "all" => Ok(TransferScope::All),
            "tcn-eps" => Ok(TransferScope::TcnEps),
            _ => Err(Error::Config(format!(
                "unknown transfer scope {s:?} (all|tcn-eps)"
            ))),
        }
    }
}

fn transferred(name: &str, scope: TransferScope) -> bool {
    match scope {
        TransferScope::All => true,
        TransferScope::TcnEps => name.contains(".conv.") || name.ends_with(".eps"),
    }
}

/// Target-model initialisation from `source`. Parameters outside `scope` come
/// from a fresh seeded initialisation of `target_config`.
pub fn transfer_init(
    source: &Model,
    target_config: &ModelConfig,
    scope: TransferScope,
    seed: u64,
) -> Result<Model> {
    let mismatches = source.config.transfer_mismatches(target_config);
    if !mismatches.is_empty() {
        return Err(Error::Transfer(format!(
            "incompatible configurations: {}",
            mismatches.join(", ")
        )));
    }
    let mut params = ParameterSet::init(target_config, seed)?;
    let mut shape_errors = Vec::new();
    for (name, fresh) in params.params.iter_mut() {
        if !transferred(name, scope) {
            continue;
        }
        match source.params.params.get(name) {
            Some(t) if t.shape() == fresh.shape() => *fresh = t.clone(),
            Some(t) => shape_errors.push(format!("{name}: {:?} vs {:?}", t.shape(), fresh.shape())),
            None => shape_errors.push(format!("{name}: missing in source")),
        }
    }
    if scope == TransferScope::All {
        for (name, fresh) in params.buffers.iter_mut() {
            match source.params.buffers.get(name) {
                Some(t) if t.shape() == fresh.shape() => *fresh = t.clone(),
                _ => shape_errors.push(format!("buffer {name}")),
            }
        }
    }
    if !shape_errors.is_empty() {
        return Err(Error::Transfer(format!(
            "incompatible tensor shapes: {}",
            shape_errors.join(", ")
        )));
    }
    Ok(Model {
        config: target_config.clone(),
        params,
    })
}

/// Initialises from `source` per `scope`, then runs the usual training loop on
/// the target data.
pub fn finetune(
    source: &Model,
    scope: TransferScope,
    data: &ForecastData<'_>,
    train_samples: &[Sample],
    val_samples: &[Sample],
    cfg: &TrainConfig,
) -> Result<(Model, TrainReport)> {
    let init = transfer_init(source, &source.config, scope, cfg.seed)?;
    train(init, data, train_samples, val_samples, cfg)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn all_scope_copies_everything() {
        let src = Model::new(ModelConfig::default(), 1).unwrap();
        let m = transfer_init(&src, &src.config, TransferScope::All, 99).unwrap();
        assert!(m.params.bitwise_eq(&src.params));
    }

    #[test]
    fn tcn_eps_scope_refreshes_readout() {
        let mut src = Model::new(ModelConfig::default(), 1).unwrap();
        src.params
            .params
            .get_mut("layers.0.eps")
            .unwrap()
            .data_mut()[0] = 0.3;
        let m = transfer_init(&src, &src.config, TransferScope::TcnEps, 99).unwrap();
        assert!(!m.params.params["readout.w"].bitwise_eq(&src.params.params["readout.w"]));
        assert!(
            m.params.params["layers.1.conv.k3"].bitwise_eq(&src.params.params["layers.1.conv.k3"])
        );
        assert_eq!(m.params.params["layers.0.eps"].item(), 0.3);
    }

    #[test]
    fn mismatch_is_transfer_error() {
        let src = Model::new(ModelConfig::default(), 1).unwrap();
        let other = ModelConfig {
            channels: 32,
            ..ModelConfig::default()
        };
        match transfer_init(&src, &other, TransferScope::All, 0) {
            Err(Error::Transfer(msg)) => assert!(msg.contains("channels")),
            other => panic!("{other:?}"),
        }
    }
}
