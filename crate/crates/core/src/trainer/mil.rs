use ndarray::{Array2, Axis};
use rand::seq::SliceRandom;

use super::{report_from_probs, EpochRecord, TrainConfig, TrainHistory};
use crate::error::{Error, Result};
use crate::metrics::{ConfusionMatrix, MetricsReport};
use crate::nets::{AbmilParams, AbmilSpec, EncoderParams};
use crate::objectives::{cosine_lr, cross_entropy, optimizer_step, softmax_rows, AdamState, LrSchedule, ParamGroupKind};
use crate::rng;
use crate::synth::Bag;

/// Bags of raw instance features with bag labels.
#[derive(Debug, Clone, PartialEq)]
pub struct BagSet {
    pub bags: Vec<Array2<f64>>,
    pub labels: Vec<usize>,
}

impl BagSet {
    pub fn new(bags: Vec<Array2<f64>>, labels: Vec<usize>) -> Result<Self> {
        if bags.is_empty() {
            return Err(Error::invalid("no bags"));
        }
        if bags.len() != labels.len() {
            return Err(Error::DimMismatch { expected: bags.len(), got: labels.len() });
        }
        if bags.iter().any(|b| b.nrows() == 0) {
            return Err(Error::invalid("empty bag"));
        }
        Ok(Self { bags, labels })
    }

    pub fn from_bags(bags: &[Bag]) -> Result<Self> {
        Self::new(bags.iter().map(Bag::matrix).collect(), bags.iter().map(|b| b.label).collect())
    }

    pub fn len(&self) -> usize {
        self.bags.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bags.is_empty()
    }

    fn embed(&self, encoder: &EncoderParams) -> Result<Vec<Array2<f64>>> {
        self.bags.iter().map(|b| encoder.embed(b.view())).collect()
    }
}

fn bag_probs(model: &AbmilParams, embedded: &[Array2<f64>]) -> Result<Array2<f64>> {
    let c = model.head.num_classes();
    let mut logits = Array2::zeros((embedded.len(), c));
    for (mut row, bag) in logits.rows_mut().into_iter().zip(embedded) {
        row.assign(&model.forward(bag.view())?.logits);
    }
    Ok(softmax_rows(logits.view()))
}

/// Bag-level predictions and metrics; instances pass through `encoder`
/// with adapters merged.
pub fn evaluate_abmil(
    model: &AbmilParams,
    encoder: &EncoderParams,
    bags: &BagSet,
) -> Result<(ConfusionMatrix, MetricsReport)> {
    let embedded = bags.embed(&encoder.merged())?;
    report_from_probs(bag_probs(model, &embedded)?.view(), &bags.labels)
}

/// Trains attention pooling on frozen embeddings, one bag per step in a
/// per-epoch shuffled order, cosine-annealed from `cfg.lr_classifier`.
pub fn train_abmil(
    cfg: &TrainConfig,
    train: &BagSet,
    encoder: &EncoderParams,
    monitor: Option<&BagSet>,
) -> Result<(AbmilParams, TrainHistory)> {
    cfg.validate()?;
    let num_classes = train.labels.iter().max().map_or(0, |m| m + 1).max(2);
    let frozen = encoder.merged();
    let embedded = train.embed(&frozen)?;
    let monitor_embedded = monitor.map(|m| m.embed(&frozen)).transpose()?;
    let spec = AbmilSpec { input_dim: frozen.output_dim(), num_classes, ..AbmilSpec::default() };
    let mut model = AbmilParams::init(&spec, cfg.seed)?;
    let n = train.len();
    let schedule = LrSchedule::new(cfg.lr_classifier, cfg.lr_adapters, cfg.epochs * n)?;
    let mut adam = AdamState::for_params(&model);
    let mut history = TrainHistory::default();
    let order_stream = rng::derive(cfg.seed, rng::stream::BATCHES);
    for epoch in 0..cfg.epochs {
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(&mut rng::seeded(rng::derive(order_stream, epoch as u64)));
        let mut loss_sum = 0.0;
        for (slot, &b) in order.iter().enumerate() {
            let bag = embedded[b].view();
            let out = model.forward(bag)?;
            let (loss, grad) = cross_entropy(out.logits.view().insert_axis(Axis(0)), &[train.labels[b]])?;
            if !loss.is_finite() {
                return Err(Error::NonFinite("bag loss"));
            }
            loss_sum += loss;
            let grads = model.backward(bag, &out, grad.row(0));
            let lr = cosine_lr(&schedule, epoch * n + slot, ParamGroupKind::Classifier)?;
            optimizer_step(&mut adam, &mut model, &grads, lr)?;
        }
        let src = report_from_probs(bag_probs(&model, &embedded)?.view(), &train.labels)?.1.balanced_accuracy;
        let tgt = match (&monitor_embedded, monitor) {
            (Some(e), Some(m)) => Some(report_from_probs(bag_probs(&model, e)?.view(), &m.labels)?.1.balanced_accuracy),
            _ => None,
        };
        let ce = loss_sum / n as f64;
        history.push(EpochRecord { epoch: epoch + 1, ce, lmmd: 0.0, total: ce, src_bacc: src, tgt_bacc: tgt });
    }
    Ok((model, history))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nets::EncoderSpec;
    use crate::synth::{default_benchmark, generate_balanced, make_bags, BagConfig};

    #[test]
    fn easy_bags_are_learned_and_encoder_untouched() {
        let data = generate_balanced(&default_benchmark(0)[0], 600, 1).unwrap();
        let cfg_bags = BagConfig { num_bags: 40, size_range: (8, 16), positive_fraction_range: (1.0, 1.0) };
        let bags = BagSet::from_bags(&make_bags(&data, &cfg_bags, 2).unwrap()).unwrap();
        let encoder = EncoderParams::init(&EncoderSpec::default(), 3).unwrap();
        let before = encoder.clone();
        let cfg = TrainConfig::mil(3);
        let (model, history) = train_abmil(&cfg, &bags, &encoder, None).unwrap();
        assert_eq!(encoder.layers(), before.layers());
        assert_eq!(history.records().len(), 30);
        let (_, r) = evaluate_abmil(&model, &encoder, &bags).unwrap();
        assert!(r.balanced_accuracy > 0.95, "{}", r.balanced_accuracy);
    }

    #[test]
    fn instance_order_does_not_change_predictions() {
        let data = generate_balanced(&default_benchmark(0)[1], 300, 4).unwrap();
        let bags = BagSet::from_bags(&make_bags(&data, &BagConfig::default(), 5).unwrap()).unwrap();
        let encoder = EncoderParams::init(&EncoderSpec::default(), 1).unwrap();
        let cfg = TrainConfig { epochs: 3, ..TrainConfig::mil(1) };
        let (model, _) = train_abmil(&cfg, &bags, &encoder, None).unwrap();
        let reversed = BagSet::new(
            bags.bags.iter().map(|b| b.slice(ndarray::s![..;-1, ..]).to_owned()).collect(),
            bags.labels.clone(),
        )
        .unwrap();
        let a = bag_probs(&model, &bags.embed(&encoder).unwrap()).unwrap();
        let b = bag_probs(&model, &reversed.embed(&encoder).unwrap()).unwrap();
        for (x, y) in a.iter().zip(b.iter()) {
            assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn empty_bags_rejected() {
        assert!(BagSet::new(vec![Array2::zeros((0, 8))], vec![0]).is_err());
        assert!(BagSet::new(vec![], vec![]).is_err());
    }
}
