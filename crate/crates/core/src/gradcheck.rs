//! Central finite-difference checks of the hand-written backward passes.
//!
//! All checks run in `f64`. A coordinate whose ±step perturbation changes a
//! ReLU sign or a pooling winner straddles a kink of the piecewise-linear
//! network; finite differences are meaningless there, so such coordinates
//! are counted as skipped instead of compared.

use std::collections::BTreeMap;
use std::fmt;

use rand::Rng;

use crate::error::Result;
use crate::layers::{Conv2d, Dense, Dropout, Flatten, ForwardCtx, Layer, MaxPool2x2, Relu, Softmax};
use crate::model::{build_small_cnn, build_small_mlp, SequentialModel};
use crate::optim::softmax_cross_entropy;
use crate::seed;
use crate::tensor::Tensor;

/// Denominator floor of [`relative_error`]. A central difference with step
/// `h = 1e-3` carries an absolute truncation error of about `h²·f'''/6`,
/// up to ~1e-8 through the softmax loss, which swamps the relative error of
/// components much smaller than this floor.
pub const REL_FLOOR: f64 = 1e-3;

#[derive(Clone, Copy, Debug)]
pub struct GradcheckConfig {
    pub step: f64,
    pub tolerance: f64,
}

impl Default for GradcheckConfig {
    fn default() -> Self {
        GradcheckConfig {
            step: 1e-3,
            tolerance: 1e-4,
        }
    }
}

/// `|a - n| / max(|a|, |n|, REL_FLOOR)`.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_FLOOR)
}

#[derive(Clone, Debug, PartialEq)]
pub struct GradEntry {
    /// e.g. `conv/weights`, `dense/input`, `loss/logits`, `small-cnn/layer3:dense/bias`.
    pub label: String,
    pub max_rel_error: f64,
    pub checked: usize,
    pub skipped: usize,
    /// `(analytic, numeric)` at the coordinate with the largest error.
    pub worst: (f64, f64),
}

impl GradEntry {
    fn new(label: impl Into<String>) -> Self {
        GradEntry {
            label: label.into(),
            max_rel_error: 0.0,
            checked: 0,
            skipped: 0,
            worst: (0.0, 0.0),
        }
    }

    fn record(&mut self, analytic: f64, numeric: Option<f64>) {
        match numeric {
            Some(n) => {
                self.checked += 1;
                let err = relative_error(analytic, n);
                if err > self.max_rel_error {
                    self.max_rel_error = err;
                    self.worst = (analytic, n);
                }
            }
            None => self.skipped += 1,
        }
    }
}

#[derive(Clone, Debug, Default)]
pub struct GradcheckReport {
    pub entries: Vec<GradEntry>,
    pub tolerance: f64,
    /// Random configurations the entries were aggregated over.
    pub configurations: usize,
}

impl GradcheckReport {
    pub fn max_rel_error(&self) -> f64 {
        self.entries.iter().map(|e| e.max_rel_error).fold(0.0, f64::max)
    }

    pub fn passed(&self) -> bool {
        self.entries
            .iter()
            .all(|e| e.max_rel_error < self.tolerance && e.checked > 0)
    }

    /// Merges entries with the same label, keeping the worst error.
    fn absorb(&mut self, entries: Vec<GradEntry>) {
        let mut by_label: BTreeMap<String, GradEntry> = self
            .entries
            .drain(..)
            .map(|e| (e.label.clone(), e))
            .collect();
        for e in entries {
            let slot = by_label
                .entry(e.label.clone())
                .or_insert_with(|| GradEntry::new(e.label.clone()));
            if e.max_rel_error > slot.max_rel_error {
                slot.max_rel_error = e.max_rel_error;
                slot.worst = e.worst;
            }
            slot.checked += e.checked;
            slot.skipped += e.skipped;
        }
        self.entries = by_label.into_values().collect();
    }
}

impl fmt::Display for GradcheckReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(
            f,
            "{:<32} {:>14} {:>9} {:>8}  status",
            "gradient", "max rel err", "checked", "kinks"
        )?;
        for e in &self.entries {
            let ok = e.max_rel_error < self.tolerance && e.checked > 0;
            writeln!(
                f,
                "{:<32} {:>14.3e} {:>9} {:>8}  {}",
                e.label,
                e.max_rel_error,
                e.checked,
                e.skipped,
                if ok { "ok" } else { "FAIL" }
            )?;
        }
        write!(
            f,
            "max relative error {:.3e} over {} configurations (tolerance {:.0e}): {}",
            self.max_rel_error(),
            self.configurations,
            self.tolerance,
            if self.passed() { "PASS" } else { "FAIL" }
        )
    }
}

fn random_tensor<R: Rng>(rng: &mut R, dims: &[usize], lo: f64, hi: f64) -> Result<Tensor<f64>> {
    let n = dims.iter().product();
    Tensor::from_vec(dims, (0..n).map(|_| rng.gen_range(lo..hi)).collect())
}

/// Which tensor of a layer a coordinate belongs to.
#[derive(Clone, Copy)]
enum Target {
    Input,
    Weights,
    Bias,
}

impl Target {
    fn name(self) -> &'static str {
        match self {
            Target::Input => "input",
            Target::Weights => "weights",
            Target::Bias => "bias",
        }
    }
}

fn param_tensor(layer: &mut Layer<f64>, target: Target) -> &mut Tensor<f64> {
    let ps = layer.params_mut().expect("parameterized layer");
    match target {
        Target::Weights => &mut ps.weights.value,
        _ => &mut ps.bias.value,
    }
}

/// Checks one layer against the scalar objective `sum(forward(x) ⊙ R)`
/// with a fixed random projection `R`.
pub fn gradcheck_layer(
    layer: &mut Layer<f64>,
    input: &Tensor<f64>,
    stream: u64,
    config: &GradcheckConfig,
) -> Result<Vec<GradEntry>> {
    let ctx = ForwardCtx::train(stream);
    let out = layer.forward(input, &ctx)?;
    let projection = random_tensor(&mut seed::rng(seed::derive(stream, &[1])), out.dims(), -1.0, 1.0)?;
    let grad_input = layer.backward(&projection)?;
    let mut base_pattern = Vec::new();
    layer.branch_pattern(&mut base_pattern);

    let objective = |layer: &mut Layer<f64>, x: &Tensor<f64>| -> Result<(f64, Vec<usize>)> {
        let y = layer.forward(x, &ctx)?;
        let value = y.data().iter().zip(projection.data()).map(|(a, b)| a * b).sum();
        let mut pattern = Vec::new();
        layer.branch_pattern(&mut pattern);
        Ok((value, pattern))
    };
    let kind = layer.kind();
    let h = config.step;

    let mut entries = Vec::new();
    let mut targets = vec![(Target::Input, grad_input)];
    if let Some(ps) = layer.params() {
        targets.push((Target::Weights, ps.weights.grad.clone()));
        targets.push((Target::Bias, ps.bias.grad.clone()));
    }
    for (target, analytic) in targets {
        let mut entry = GradEntry::new(format!("{kind}/{}", target.name()));
        let mut x = input.clone();
        for i in 0..analytic.numel() {
            let mut eval_at = |delta: f64, layer: &mut Layer<f64>| -> Result<(f64, Vec<usize>)> {
                match target {
                    Target::Input => {
                        let orig = x.data()[i];
                        x.data_mut()[i] = orig + delta;
                        let r = objective(layer, &x);
                        x.data_mut()[i] = orig;
                        r
                    }
                    _ => {
                        let orig = param_tensor(layer, target).data()[i];
                        param_tensor(layer, target).data_mut()[i] = orig + delta;
                        let r = objective(layer, input);
                        param_tensor(layer, target).data_mut()[i] = orig;
                        r
                    }
                }
            };
            let (plus, p_plus) = eval_at(h, layer)?;
            let (minus, p_minus) = eval_at(-h, layer)?;
            let smooth = p_plus == base_pattern && p_minus == base_pattern;
            entry.record(analytic.data()[i], smooth.then(|| (plus - minus) / (2.0 * h)));
        }
        entries.push(entry);
    }
    Ok(entries)
}

/// Checks the fused softmax/cross-entropy gradient with respect to the logits.
pub fn gradcheck_loss(logits: &Tensor<f64>, targets: &Tensor<f64>, config: &GradcheckConfig) -> Result<GradEntry> {
    let analytic = softmax_cross_entropy(logits, targets)?.grad_logits;
    let mut z = logits.clone();
    let mut entry = GradEntry::new("loss/logits");
    for i in 0..z.numel() {
        let orig = z.data()[i];
        z.data_mut()[i] = orig + config.step;
        let plus = softmax_cross_entropy(&z, targets)?.mean_loss;
        z.data_mut()[i] = orig - config.step;
        let minus = softmax_cross_entropy(&z, targets)?.mean_loss;
        z.data_mut()[i] = orig;
        entry.record(analytic.data()[i], Some((plus - minus) / (2.0 * config.step)));
    }
    Ok(entry)
}

/// Checks every parameter gradient (and the input gradient) of the full
/// training loss of `model` on one batch. Dropout layers run in train mode
/// with a fixed stream, so a nonzero rate is checked under a frozen mask.
pub fn gradcheck_model(
    model: &mut SequentialModel<f64>,
    images: &Tensor<f64>,
    targets: &Tensor<f64>,
    label: &str,
    config: &GradcheckConfig,
) -> Result<Vec<GradEntry>> {
    let ctx = ForwardCtx::train(0x6772_6164);
    let loss_at = |model: &mut SequentialModel<f64>, x: &Tensor<f64>| -> Result<(f64, Vec<usize>)> {
        let logits = model.forward_logits(x, &ctx)?;
        let loss = softmax_cross_entropy(&logits, targets)?.mean_loss;
        Ok((loss, model.branch_pattern()))
    };

    let logits = model.forward_logits(images, &ctx)?;
    let loss = softmax_cross_entropy(&logits, targets)?;
    let base_pattern = model.branch_pattern();
    let grad_input = model.backward(&loss.grad_logits)?;
    let h = config.step;

    let mut entries = Vec::new();
    let mut input_entry = GradEntry::new(format!("{label}/input"));
    let mut x = images.clone();
    for i in 0..x.numel() {
        let orig = x.data()[i];
        x.data_mut()[i] = orig + h;
        let (plus, pp) = loss_at(model, &x)?;
        x.data_mut()[i] = orig - h;
        let (minus, pm) = loss_at(model, &x)?;
        x.data_mut()[i] = orig;
        let smooth = pp == base_pattern && pm == base_pattern;
        input_entry.record(grad_input.data()[i], smooth.then(|| (plus - minus) / (2.0 * h)));
    }
    entries.push(input_entry);

    for li in 0..model.layers().len() {
        let Some(ps) = model.layers()[li].params() else { continue };
        let kind = model.layers()[li].kind();
        let analytic = [
            (Target::Weights, ps.weights.grad.clone()),
            (Target::Bias, ps.bias.grad.clone()),
        ];
        for (target, grad) in analytic {
            let mut entry = GradEntry::new(format!("{label}/layer{li}:{kind}/{}", target.name()));
            for i in 0..grad.numel() {
                let eval_at = |delta: f64, model: &mut SequentialModel<f64>| {
                    let t = param_tensor(&mut model.layers_mut()[li], target);
                    let orig = t.data()[i];
                    t.data_mut()[i] = orig + delta;
                    let r = loss_at(model, images);
                    param_tensor(&mut model.layers_mut()[li], target).data_mut()[i] = orig;
                    r
                };
                let (plus, pp) = eval_at(h, model)?;
                let (minus, pm) = eval_at(-h, model)?;
                let smooth = pp == base_pattern && pm == base_pattern;
                entry.record(grad.data()[i], smooth.then(|| (plus - minus) / (2.0 * h)));
            }
            entries.push(entry);
        }
    }
    Ok(entries)
}

/// Builds a model with `builder`, draws a random batch with random one-hot
/// targets, and checks the full loss gradient.
pub fn gradcheck<F>(builder: F, model_seed: u64, batch: usize, label: &str, config: &GradcheckConfig) -> Result<GradcheckReport>
where
    F: Fn(u64) -> Result<SequentialModel<f64>>,
{
    let mut model = builder(model_seed)?;
    let mut rng = seed::rng(seed::derive(model_seed, &[0xba7c]));
    let mut dims = vec![batch];
    dims.extend_from_slice(model.input_dims());
    let images = random_tensor(&mut rng, &dims, 0.0, 1.0)?;
    let classes = model.classes();
    let mut targets = Tensor::zeros(&[batch, classes])?;
    for row in targets.data_mut().chunks_exact_mut(classes) {
        row[rng.gen_range(0..classes)] = 1.0;
    }
    let mut report = GradcheckReport {
        tolerance: config.tolerance,
        configurations: 1,
        ..Default::default()
    };
    report.absorb(gradcheck_model(&mut model, &images, &targets, label, config)?);
    Ok(report)
}

/// One random configuration of every layer kind, the fused loss, and the
/// two reduced reference networks.
pub fn check_configuration(index: u64, base_seed: u64, config: &GradcheckConfig) -> Result<Vec<GradEntry>> {
    let stream = seed::derive(base_seed, &[index]);
    let mut rng = seed::rng(stream);
    let mut entries = Vec::new();

    let n = rng.gen_range(1..=3);
    let (n_in, n_out) = (rng.gen_range(1..=8), rng.gen_range(1..=6));
    let mut dense = Layer::Dense(Dense::new(n_in, n_out, &mut rng)?);
    if let Some(ps) = dense.params_mut() {
        ps.bias.value = random_tensor(&mut rng, &[n_out], -0.5, 0.5)?;
    }
    let x = random_tensor(&mut rng, &[n, n_in], -1.0, 1.0)?;
    entries.extend(gradcheck_layer(&mut dense, &x, stream, config)?);

    let c_in = rng.gen_range(1..=3);
    let (h, w) = (rng.gen_range(3..=8), rng.gen_range(3..=8));
    let (kh, kw) = (rng.gen_range(1..=h.min(4)), rng.gen_range(1..=w.min(4)));
    let mut conv = Layer::Conv(Conv2d::new(c_in, rng.gen_range(1..=3), (kh, kw), &mut rng)?);
    if let Some(ps) = conv.params_mut() {
        let c_out = ps.bias.value.numel();
        ps.bias.value = random_tensor(&mut rng, &[c_out], -0.5, 0.5)?;
    }
    let n = rng.gen_range(1..=2);
    let x = random_tensor(&mut rng, &[n, c_in, h, w], -1.0, 1.0)?;
    entries.extend(gradcheck_layer(&mut conv, &x, stream, config)?);

    let dims = [
        rng.gen_range(1..=2),
        rng.gen_range(1..=3),
        2 * rng.gen_range(1..=4),
        2 * rng.gen_range(1..=4),
    ];
    let x = random_tensor(&mut rng, &dims, -1.0, 1.0)?;
    entries.extend(gradcheck_layer(&mut Layer::MaxPool(MaxPool2x2::new()), &x, stream, config)?);
    entries.extend(gradcheck_layer(&mut Layer::Relu(Relu::new()), &x, stream, config)?);
    entries.extend(gradcheck_layer(&mut Layer::Flatten(Flatten::new()), &x, stream, config)?);
    let rate = rng.gen_range(0.0..0.75);
    entries.extend(gradcheck_layer(&mut Layer::Dropout(Dropout::new(rate)?), &x, stream, config)?);

    let classes = rng.gen_range(2..=10);
    let rows = rng.gen_range(1..=4);
    let logits = random_tensor(&mut rng, &[rows, classes], -3.0, 3.0)?;
    entries.extend(gradcheck_layer(&mut Layer::Softmax(Softmax::new()), &logits, stream, config)?);
    let mut targets = Tensor::zeros(&[rows, classes])?;
    for row in targets.data_mut().chunks_exact_mut(classes) {
        row[rng.gen_range(0..classes)] = 1.0;
    }
    entries.push(gradcheck_loss(&logits, &targets, config)?);

    let model_seed = rng.gen();
    for (label, report) in [
        ("small-cnn", gradcheck(|s| build_small_cnn(s, 0.0), model_seed, 4, "small-cnn", config)?),
        ("small-mlp", gradcheck(|s| build_small_mlp(s, 0.0), model_seed, 4, "small-mlp", config)?),
    ] {
        entries.extend(report.entries.into_iter().map(|mut e| {
            if !e.label.starts_with(label) {
                e.label = format!("{label}/{}", e.label);
            }
            e
        }));
    }
    Ok(entries)
}

/// Runs [`check_configuration`] for `configurations` random draws and
/// aggregates the worst error per gradient.
pub fn gradcheck_suite(configurations: usize, base_seed: u64, config: &GradcheckConfig) -> Result<GradcheckReport> {
    let mut report = GradcheckReport {
        tolerance: config.tolerance,
        configurations,
        ..Default::default()
    };
    for i in 0..configurations {
        report.absorb(check_configuration(i as u64, base_seed, config)?);
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::error::Error;

    #[test]
    fn relative_error_definition() {
        assert_eq!(relative_error(0.0, 0.0), 0.0);
        assert!((relative_error(1.0, 1.1) - 0.1 / 1.1).abs() < 1e-15);
        assert!((relative_error(1e-5, 2e-5) - 1e-5 / REL_FLOOR).abs() < 1e-15);
    }

    #[test]
    fn small_cnn_gradients() {
        let cfg = GradcheckConfig::default();
        let r = gradcheck(|s| build_small_cnn(s, 0.0), 3, 4, "small-cnn", &cfg).unwrap();
        assert!(r.passed(), "{r}");
    }

    #[test]
    fn small_mlp_gradients() {
        let cfg = GradcheckConfig::default();
        let r = gradcheck(|s| build_small_mlp(s, 0.0), 3, 4, "small-mlp", &cfg).unwrap();
        assert!(r.passed(), "{r}");
    }

    #[test]
    fn non_one_hot_targets_propagate_data_error() {
        let mut model = build_small_cnn::<f64>(1, 0.0).unwrap();
        let x = Tensor::zeros(&[2, 1, 8, 8]).unwrap();
        let t = Tensor::zeros(&[2, 10]).unwrap();
        let err = gradcheck_model(&mut model, &x, &t, "m", &GradcheckConfig::default()).unwrap_err();
        assert!(matches!(err, Error::Data(_)));
    }

    #[test]
    fn dropout_checked_under_frozen_mask() {
        let cfg = GradcheckConfig::default();
        let r = gradcheck(|s| build_small_cnn(s, 0.5), 8, 4, "small-cnn", &cfg).unwrap();
        assert!(r.passed(), "{r}");
    }

    #[test]
    fn report_fails_above_tolerance_or_when_nothing_checked() {
        let entry = |err, checked| GradEntry {
            label: "x".into(),
            max_rel_error: err,
            checked,
            skipped: 0,
            worst: (0.0, 0.0),
        };
        let report = |e| GradcheckReport {
            entries: vec![e],
            tolerance: 1e-4,
            configurations: 1,
        };
        assert!(report(entry(1e-6, 3)).passed());
        assert!(!report(entry(relative_error(1.0, 1.01), 3)).passed());
        assert!(!report(entry(0.0, 0)).passed());
    }
}
