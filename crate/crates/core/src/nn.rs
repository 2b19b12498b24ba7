//! Multilayer perceptrons, the two model shapes built from them, and the
//! training losses of both learning paradigms.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{concat_rows, Graph, Tensor, Var};
use crate::error::{Error, Result};

pub const DEFAULT_TEMPERATURE: f64 = 0.5;

/// Layer widths of a fully connected network. Hidden layers use relu, the
/// output layer is linear.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MlpSpec {
    pub widths: Vec<usize>,
    pub seed: u64,
}

impl MlpSpec {
    pub fn new(widths: Vec<usize>, seed: u64) -> Self {
        MlpSpec { widths, seed }
    }

    pub fn validate(&self) -> Result<()> {
        if self.widths.len() < 2 || self.widths.contains(&0) {
            return Err(Error::Contract(format!(
                "mlp needs at least two positive widths, got {:?}",
                self.widths
            )));
        }
        Ok(())
    }

    pub fn input_dim(&self) -> usize {
        self.widths[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.widths.last().expect("validated")
    }

    /// `(weight, bias)` shapes for every layer, flattened in order.
    pub fn param_shapes(&self) -> Vec<Vec<usize>> {
        self.widths
            .windows(2)
            .flat_map(|w| [vec![w[0], w[1]], vec![w[1]]])
            .collect()
    }
}

/// Glorot-uniform weights and zero biases, deterministic in `spec.seed`.
pub fn init_params(spec: &MlpSpec) -> Result<Vec<Tensor>> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut params = Vec::with_capacity(2 * (spec.widths.len() - 1));
    for w in spec.widths.windows(2) {
        let (fan_in, fan_out) = (w[0], w[1]);
        let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
        let weights = (0..fan_in * fan_out)
            .map(|_| rng.random_range(-limit..limit))
            .collect();
        params.push(Tensor::new(vec![fan_in, fan_out], weights)?);
        params.push(Tensor::zeros(&[fan_out]));
    }
    Ok(params)
}

fn mlp_forward<'g>(params: &[Var<'g>], x: Var<'g>) -> Result<Var<'g>> {
    let layers = params.len() / 2;
    let mut h = x;
    for (i, wb) in params.chunks(2).enumerate() {
        h = h.matmul(wb[0])?.add(wb[1])?;
        if i + 1 < layers {
            h = h.relu();
        }
    }
    Ok(h)
}

fn check_params(spec: &MlpSpec, params: &[Tensor]) -> Result<()> {
    let shapes = spec.param_shapes();
    if shapes.len() != params.len() {
        return Err(Error::shape("mlp params", &[shapes.len()], &[params.len()]));
    }
    for (s, p) in shapes.iter().zip(params) {
        if s.as_slice() != p.shape() {
            return Err(Error::shape("mlp params", s, p.shape()));
        }
    }
    Ok(())
}

/// A standalone perceptron.
#[derive(Clone, Debug, PartialEq)]
pub struct Mlp {
    spec: MlpSpec,
    params: Vec<Tensor>,
}

impl Mlp {
    pub fn init(spec: MlpSpec) -> Result<Self> {
        let params = init_params(&spec)?;
        Ok(Mlp { spec, params })
    }

    pub fn from_params(spec: MlpSpec, params: Vec<Tensor>) -> Result<Self> {
        spec.validate()?;
        check_params(&spec, &params)?;
        Ok(Mlp { spec, params })
    }

    pub fn spec(&self) -> &MlpSpec {
        &self.spec
    }

    pub fn params(&self) -> &[Tensor] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [Tensor] {
        &mut self.params
    }

    pub fn forward_with<'g>(&self, params: &[Var<'g>], x: Var<'g>) -> Result<Var<'g>> {
        check_input(&self.spec, x)?;
        mlp_forward(params, x)
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let g = Graph::new();
        let params = bind(&g, &self.params, false);
        let xv = g.constant(x.clone());
        Ok(self.forward_with(&params, xv)?.value())
    }
}

fn check_input(spec: &MlpSpec, x: Var<'_>) -> Result<()> {
    let shape = x.shape();
    match shape.as_slice() {
        [_, d] if *d == spec.input_dim() => Ok(()),
        s => Err(Error::shape("forward", s, &[0, spec.input_dim()])),
    }
}

/// Registers every tensor as a leaf of `g`.
pub fn bind<'g>(g: &'g Graph, params: &[Tensor], requires_grad: bool) -> Vec<Var<'g>> {
    params
        .iter()
        .map(|p| g.leaf(p.clone(), requires_grad))
        .collect()
}

/// Which layer of a model an analysis reads.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Surface {
    /// Encoder embedding.
    Encoder,
    /// Projector output for contrastive models, logits for classifiers.
    #[default]
    Output,
}

/// One minibatch of training data. Contrastive losses read the two
/// augmented views, supervised losses the raw samples and labels.
#[derive(Clone, Debug)]
pub struct TrainBatch {
    pub x: Tensor,
    pub labels: Vec<usize>,
    pub views: Option<(Tensor, Tensor)>,
}

pub trait Model {
    fn params(&self) -> &[Tensor];
    fn params_mut(&mut self) -> &mut [Tensor];
    fn input_dim(&self) -> usize;
    fn output_dim(&self) -> usize;

    fn embed_with<'g>(&self, params: &[Var<'g>], x: Var<'g>) -> Result<Var<'g>>;

    /// Input to pre-softmax output: the surface penalties and attacks act on.
    fn output_with<'g>(&self, params: &[Var<'g>], x: Var<'g>) -> Result<Var<'g>>;

    /// The paradigm's own training loss on a batch.
    fn training_loss<'g>(
        &self,
        g: &'g Graph,
        params: &[Var<'g>],
        batch: &TrainBatch,
    ) -> Result<Var<'g>>;

    /// Per-sample training loss, shape `[B]`. Contrastive losses keep their
    /// batch context: each sample averages the losses of its two anchors.
    fn sample_losses<'g>(
        &self,
        g: &'g Graph,
        params: &[Var<'g>],
        batch: &TrainBatch,
    ) -> Result<Var<'g>>;

    /// Whether [`Model::training_loss`] reads augmented views.
    fn needs_views(&self) -> bool;

    /// The layer membership attacks read and unlearning acts on: the encoder
    /// embedding for contrastive models, the logits for classifiers.
    fn attack_surface(&self) -> Surface {
        if self.needs_views() {
            Surface::Encoder
        } else {
            Surface::Output
        }
    }

    fn bind<'g>(&self, g: &'g Graph, requires_grad: bool) -> Vec<Var<'g>> {
        bind(g, self.params(), requires_grad)
    }

    fn surface_with<'g>(
        &self,
        surface: Surface,
        params: &[Var<'g>],
        x: Var<'g>,
    ) -> Result<Var<'g>> {
        match surface {
            Surface::Encoder => self.embed_with(params, x),
            Surface::Output => self.output_with(params, x),
        }
    }

    fn evaluate(&self, surface: Surface, x: &Tensor) -> Result<Tensor> {
        let g = Graph::new();
        let params = self.bind(&g, false);
        let xv = g.constant(x.clone());
        Ok(self.surface_with(surface, &params, xv)?.value())
    }

    fn output(&self, x: &Tensor) -> Result<Tensor> {
        self.evaluate(Surface::Output, x)
    }

    fn embed(&self, x: &Tensor) -> Result<Tensor> {
        self.evaluate(Surface::Encoder, x)
    }
}

/// Anything that maps a batch of samples to a batch of vectors.
pub trait Embed {
    fn embed_batch(&self, x: &Tensor) -> Result<Tensor>;
}

impl<F> Embed for F
where
    F: Fn(&Tensor) -> Result<Tensor>,
{
    fn embed_batch(&self, x: &Tensor) -> Result<Tensor> {
        self(x)
    }
}

impl Embed for Mlp {
    fn embed_batch(&self, x: &Tensor) -> Result<Tensor> {
        self.forward(x)
    }
}

/// A model read at a fixed surface.
pub struct SurfaceView<'a, M: ?Sized> {
    pub model: &'a M,
    pub surface: Surface,
}

impl<'a, M: Model + ?Sized> Embed for SurfaceView<'a, M> {
    fn embed_batch(&self, x: &Tensor) -> Result<Tensor> {
        self.model.evaluate(self.surface, x)
    }
}

pub fn view<M: Model + ?Sized>(model: &M, surface: Surface) -> SurfaceView<'_, M> {
    SurfaceView { model, surface }
}

fn split_params<'a, T>(encoder: &MlpSpec, params: &'a [T]) -> (&'a [T], &'a [T]) {
    params.split_at(2 * (encoder.widths.len() - 1))
}

/// Encoder followed by a projection head, trained with NT-Xent.
#[derive(Clone, Debug, PartialEq)]
pub struct ContrastiveModel {
    pub encoder: MlpSpec,
    pub projector: MlpSpec,
    pub temperature: f64,
    params: Vec<Tensor>,
}

impl ContrastiveModel {
    pub fn new(encoder: MlpSpec, projector: MlpSpec, temperature: f64) -> Result<Self> {
        let mut params = init_params(&encoder)?;
        params.extend(init_params(&projector)?);
        Self::from_params(encoder, projector, temperature, params)
    }

    pub fn from_params(
        encoder: MlpSpec,
        projector: MlpSpec,
        temperature: f64,
        params: Vec<Tensor>,
    ) -> Result<Self> {
        encoder.validate()?;
        projector.validate()?;
        if projector.input_dim() != encoder.output_dim() {
            return Err(Error::shape(
                "contrastive model",
                &encoder.widths,
                &projector.widths,
            ));
        }
        if !(temperature > 0.0) {
            return Err(Error::Contract(format!(
                "temperature must be positive, got {temperature}"
            )));
        }
        let (enc, proj) = split_params(&encoder, &params);
        check_params(&encoder, enc)?;
        check_params(&projector, proj)?;
        Ok(ContrastiveModel {
            encoder,
            projector,
            temperature,
            params,
        })
    }
}

impl Model for ContrastiveModel {
    fn params(&self) -> &[Tensor] {
        &self.params
    }

    fn params_mut(&mut self) -> &mut [Tensor] {
        &mut self.params
    }

    fn input_dim(&self) -> usize {
        self.encoder.input_dim()
    }

    fn output_dim(&self) -> usize {
        self.projector.output_dim()
    }

    fn embed_with<'g>(&self, params: &[Var<'g>], x: Var<'g>) -> Result<Var<'g>> {
        check_input(&self.encoder, x)?;
        mlp_forward(split_params(&self.encoder, params).0, x)
    }

    fn output_with<'g>(&self, params: &[Var<'g>], x: Var<'g>) -> Result<Var<'g>> {
        let h = self.embed_with(params, x)?;
        mlp_forward(split_params(&self.encoder, params).1, h)
    }

    fn training_loss<'g>(
        &self,
        g: &'g Graph,
        params: &[Var<'g>],
        batch: &TrainBatch,
    ) -> Result<Var<'g>> {
        let (a, b) = batch
            .views
            .as_ref()
            .ok_or_else(|| Error::Contract("contrastive loss needs two augmented views".into()))?;
        let za = self.output_with(params, g.constant(a.clone()))?;
        let zb = self.output_with(params, g.constant(b.clone()))?;
        nt_xent(za, zb, self.temperature)
    }

    fn sample_losses<'g>(
        &self,
        g: &'g Graph,
        params: &[Var<'g>],
        batch: &TrainBatch,
    ) -> Result<Var<'g>> {
        let (a, b) = batch
            .views
            .as_ref()
            .ok_or_else(|| Error::Contract("contrastive loss needs two augmented views".into()))?;
        let n = a.rows();
        let za = self.output_with(params, g.constant(a.clone()))?;
        let zb = self.output_with(params, g.constant(b.clone()))?;
        let anchors = nt_xent_per_anchor(za, zb, self.temperature)?;
        Ok(anchors
            .reshape(&[2, n])?
            .sum_to(&[1, n])?
            .reshape(&[n])?
            .scale(0.5))
    }

    fn needs_views(&self) -> bool {
        true
    }
}

/// Encoder followed by a linear head producing class logits.
#[derive(Clone, Debug, PartialEq)]
pub struct ClassifierModel {
    pub encoder: MlpSpec,
    pub head: MlpSpec,
    params: Vec<Tensor>,
}

impl ClassifierModel {
    pub fn new(encoder: MlpSpec, head: MlpSpec) -> Result<Self> {
        let mut params = init_params(&encoder)?;
        params.extend(init_params(&head)?);
        Self::from_params(encoder, head, params)
    }

    pub fn from_params(encoder: MlpSpec, head: MlpSpec, params: Vec<Tensor>) -> Result<Self> {
        encoder.validate()?;
        head.validate()?;
        if head.input_dim() != encoder.output_dim() {
            return Err(Error::shape(
                "classifier model",
                &encoder.widths,
                &head.widths,
            ));
        }
        let (enc, h) = split_params(&encoder, &params);
        check_params(&encoder, enc)?;
        check_params(&head, h)?;
        Ok(ClassifierModel {
            encoder,
            head,
            params,
        })
    }

    pub fn classes(&self) -> usize {
        self.head.output_dim()
    }
}

impl Model for ClassifierModel {
    fn params(&self) -> &[Tensor] {
        &self.params
    }

    fn params_mut(&mut self) -> &mut [Tensor] {
        &mut self.params
    }

    fn input_dim(&self) -> usize {
        self.encoder.input_dim()
    }

    fn output_dim(&self) -> usize {
        self.head.output_dim()
    }

    fn embed_with<'g>(&self, params: &[Var<'g>], x: Var<'g>) -> Result<Var<'g>> {
        check_input(&self.encoder, x)?;
        mlp_forward(split_params(&self.encoder, params).0, x)
    }

    fn output_with<'g>(&self, params: &[Var<'g>], x: Var<'g>) -> Result<Var<'g>> {
        let h = self.embed_with(params, x)?;
        mlp_forward(split_params(&self.encoder, params).1, h)
    }

    fn training_loss<'g>(
        &self,
        g: &'g Graph,
        params: &[Var<'g>],
        batch: &TrainBatch,
    ) -> Result<Var<'g>> {
        let logits = self.output_with(params, g.constant(batch.x.clone()))?;
        cross_entropy(logits, &batch.labels)
    }

    fn sample_losses<'g>(
        &self,
        g: &'g Graph,
        params: &[Var<'g>],
        batch: &TrainBatch,
    ) -> Result<Var<'g>> {
        let logits = self.output_with(params, g.constant(batch.x.clone()))?;
        cross_entropy_per_sample(logits, &batch.labels)
    }

    fn needs_views(&self) -> bool {
        false
    }
}

/// Either model kind, for code that handles both paradigms.
#[derive(Clone, Debug, PartialEq)]
pub enum AnyModel {
    Contrastive(ContrastiveModel),
    Classifier(ClassifierModel),
}

macro_rules! delegate {
    ($self:ident, $m:ident => $e:expr) => {
        match $self {
            AnyModel::Contrastive($m) => $e,
            AnyModel::Classifier($m) => $e,
        }
    };
}

impl Model for AnyModel {
    fn params(&self) -> &[Tensor] {
        delegate!(self, m => m.params())
    }

    fn params_mut(&mut self) -> &mut [Tensor] {
        delegate!(self, m => m.params_mut())
    }

    fn input_dim(&self) -> usize {
        delegate!(self, m => m.input_dim())
    }

    fn output_dim(&self) -> usize {
        delegate!(self, m => m.output_dim())
    }

    fn embed_with<'g>(&self, params: &[Var<'g>], x: Var<'g>) -> Result<Var<'g>> {
        delegate!(self, m => m.embed_with(params, x))
    }

    fn output_with<'g>(&self, params: &[Var<'g>], x: Var<'g>) -> Result<Var<'g>> {
        delegate!(self, m => m.output_with(params, x))
    }

    fn training_loss<'g>(
        &self,
        g: &'g Graph,
        params: &[Var<'g>],
        batch: &TrainBatch,
    ) -> Result<Var<'g>> {
        delegate!(self, m => m.training_loss(g, params, batch))
    }

    fn sample_losses<'g>(
        &self,
        g: &'g Graph,
        params: &[Var<'g>],
        batch: &TrainBatch,
    ) -> Result<Var<'g>> {
        delegate!(self, m => m.sample_losses(g, params, batch))
    }

    fn needs_views(&self) -> bool {
        delegate!(self, m => m.needs_views())
    }
}

fn one_hot(labels: &[usize], classes: usize) -> Result<Tensor> {
    let mut data = vec![0.0; labels.len() * classes];
    for (i, &l) in labels.iter().enumerate() {
        if l >= classes {
            return Err(Error::Domain(format!(
                "label {l} out of range for {classes} classes"
            )));
        }
        data[i * classes + l] = 1.0;
    }
    Tensor::new(vec![labels.len(), classes], data)
}

/// Per-sample `-log softmax(logits)[label]`, shape `[B]`.
pub fn cross_entropy_per_sample<'g>(logits: Var<'g>, labels: &[usize]) -> Result<Var<'g>> {
    let shape = logits.shape();
    let (b, k) = match shape.as_slice() {
        [b, k] if *b == labels.len() => (*b, *k),
        s => return Err(Error::shape("cross_entropy", s, &[labels.len(), 0])),
    };
    let mask = logits.graph().constant(one_hot(labels, k)?);
    logits
        .log_softmax_rows()?
        .mul(mask)?
        .sum_to(&[b, 1])?
        .reshape(&[b])
        .map(|v| v.neg())
}

/// Mean cross-entropy of `logits` `[B, K]` against integer labels.
pub fn cross_entropy<'g>(logits: Var<'g>, labels: &[usize]) -> Result<Var<'g>> {
    Ok(cross_entropy_per_sample(logits, labels)?.mean())
}

/// NT-Xent loss of every anchor, shape `[2B]`.
///
/// Rows `0..B` are anchors from `views_a`, rows `B..2B` from `views_b`; the
/// positive of row `i` is its counterpart in the other view and the other
/// `2B - 2` rows are negatives. Similarities are cosine, scaled by
/// `1 / temperature`.
pub fn nt_xent_per_anchor<'g>(
    views_a: Var<'g>,
    views_b: Var<'g>,
    temperature: f64,
) -> Result<Var<'g>> {
    let (sa, sb) = (views_a.shape(), views_b.shape());
    if sa != sb || sa.len() != 2 {
        return Err(Error::shape("nt_xent", &sa, &sb));
    }
    let b = sa[0];
    if b < 2 {
        return Err(Error::Contract(
            "nt_xent needs at least two pairs so that negatives exist".into(),
        ));
    }
    if !(temperature > 0.0) {
        return Err(Error::Contract(format!(
            "temperature must be positive, got {temperature}"
        )));
    }
    let g = views_a.graph();
    let n = 2 * b;
    let z = concat_rows(&[views_a, views_b])?;
    let inv_norms = z.row_l2_norm()?.reshape(&[n, 1])?.recip_or_zero();
    let zn = z.mul(inv_norms)?;
    let logits = zn.matmul(zn.transpose()?)?.scale(1.0 / temperature);

    // Self-similarity is pushed out of the softmax with a large negative bias.
    let mut self_mask = vec![0.0; n * n];
    let mut positives = vec![0.0; n * n];
    for i in 0..n {
        self_mask[i * n + i] = -1e9;
        positives[i * n + (i + b) % n] = 1.0;
    }
    let masked = logits.add(g.constant(Tensor::new(vec![n, n], self_mask)?))?;
    let picked = masked
        .log_softmax_rows()?
        .mul(g.constant(Tensor::new(vec![n, n], positives)?))?;
    Ok(picked.sum_to(&[n, 1])?.reshape(&[n])?.neg())
}

/// SimCLR's normalized-temperature cross entropy over paired views.
pub fn nt_xent<'g>(views_a: Var<'g>, views_b: Var<'g>, temperature: f64) -> Result<Var<'g>> {
    Ok(nt_xent_per_anchor(views_a, views_b, temperature)?.mean())
}

pub fn cosine_similarity(u: &[f64], v: &[f64]) -> Result<f64> {
    if u.len() != v.len() {
        return Err(Error::shape("cosine_similarity", &[u.len()], &[v.len()]));
    }
    let nu = u.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nv = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if nu == 0.0 || nv == 0.0 {
        return Err(Error::Domain("cosine similarity of a zero vector".into()));
    }
    let dot: f64 = u.iter().zip(v).map(|(a, b)| a * b).sum();
    Ok((dot / (nu * nv)).clamp(-1.0, 1.0))
}

/// Row-wise softmax of plain values.
pub fn softmax_rows(t: &Tensor) -> Result<Tensor> {
    let g = Graph::new();
    Ok(g.constant(t.clone()).softmax_rows()?.value())
}
