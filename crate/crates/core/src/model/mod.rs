//! Network assembly: the U-Net encoder/decoder with an optional graph bottleneck,
//! parameter layout and initialization, and the `.gacm` file format.

mod io;
mod spec;

pub use io::{
    load_model, read_container, save_model, write_container, Container, ContainerKind,
    FORMAT_VERSION, MAGIC,
};
pub use spec::{ModelSpec, Variant};

use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::graph::{build_grid_graph, center_of_mass, cheb_conv, gat_conv, NormalizedLaplacian};
use crate::nn::{conv2d, dilated_conv2d, glorot_bound};
use crate::real::Real;
use crate::tensor::{Neighborhoods, SparseMatrix, Tape, Tensor, Var};

/// Negative slope of the LeakyReLU after every convolution.
pub const CONV_SLOPE: f64 = 0.01;

/// Shape and initialization fans of one named parameter.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParamInfo {
    pub name: String,
    pub shape: Vec<usize>,
    pub fan_in: usize,
    pub fan_out: usize,
    pub is_bias: bool,
}

impl ParamInfo {
    fn weight(name: String, shape: Vec<usize>, fan_in: usize, fan_out: usize) -> Self {
        ParamInfo {
            name,
            shape,
            fan_in,
            fan_out,
            is_bias: false,
        }
    }

    fn bias(name: String, len: usize) -> Self {
        ParamInfo {
            name,
            shape: vec![len],
            fan_in: 0,
            fan_out: 0,
            is_bias: true,
        }
    }

    pub fn numel(&self) -> usize {
        self.shape.iter().product()
    }
}

fn conv_params(out: &mut Vec<ParamInfo>, prefix: &str, c_in: usize, c_out: usize, k: usize) {
    let area = k * k;
    out.push(ParamInfo::weight(
        format!("{prefix}.weight"),
        vec![c_out, c_in, k, k],
        c_in * area,
        c_out * area,
    ));
    out.push(ParamInfo::bias(format!("{prefix}.bias"), c_out));
}

/// Every parameter of the network described by `spec`, in declaration order.
pub fn param_layout(spec: &ModelSpec) -> Vec<ParamInfo> {
    let mut out = Vec::new();
    let mut c = spec.in_channels;
    for (s, &w) in spec.widths.iter().enumerate() {
        conv_params(&mut out, &format!("enc{s}.conv"), c, w, 3);
        conv_params(&mut out, &format!("enc{s}.dilated"), w, w, 3);
        c = w;
    }
    if spec.variant == Variant::GacUnet {
        out.push(ParamInfo::weight(
            "gat.weight".into(),
            vec![spec.gat_out, c],
            c,
            spec.gat_out,
        ));
        out.push(ParamInfo::weight(
            "gat.attn".into(),
            vec![2 * spec.gat_out],
            2 * spec.gat_out,
            1,
        ));
        for k in 0..=spec.cheb_order {
            out.push(ParamInfo::weight(
                format!("cheb.theta{k}"),
                vec![spec.cheb_out, spec.gat_out],
                spec.gat_out,
                spec.cheb_out,
            ));
        }
    }
    let mut c = spec.bottleneck_channels();
    for (s, &w) in spec.widths.iter().enumerate().rev() {
        conv_params(&mut out, &format!("dec{s}.conv"), c + w, w, 3);
        c = w;
    }
    conv_params(&mut out, "head", c, spec.out_channels, 1);
    out
}

/// Total scalar count; a pure function of the spec.
pub fn param_count(spec: &ModelSpec) -> usize {
    param_layout(spec).iter().map(ParamInfo::numel).sum()
}

/// Graph structures of the bottleneck grid, built once per spec.
#[derive(Debug)]
struct Bottleneck<T> {
    neighborhoods: Arc<Neighborhoods>,
    laplacian: Arc<SparseMatrix<T>>,
}

#[derive(Debug, Clone)]
pub struct NamedParam<T> {
    pub name: String,
    pub value: Tensor<T>,
}

/// Named parameters plus the spec that produced them.
#[derive(Debug, Clone)]
pub struct Model<T: Real> {
    spec: ModelSpec,
    params: Vec<NamedParam<T>>,
    bottleneck: Option<Arc<Bottleneck<T>>>,
}

/// Intermediate values of one forward pass.
#[derive(Debug, Clone)]
pub struct Forward<T> {
    /// `out_channels × H × W` probabilities.
    pub output: Var,
    /// Pre-pool feature map of every encoder stage.
    pub encoder: Vec<Var>,
    /// Bottleneck output fed to the decoder.
    pub bottleneck: Var,
    /// GAT coefficients in neighbourhood order, if the graph block ran.
    pub attention: Option<Vec<T>>,
}

impl<T: Real> Model<T> {
    /// Allocates a model with Glorot-uniform weights and zero biases drawn from `spec.seed`.
    pub fn build(spec: ModelSpec) -> Result<Self> {
        let seed = spec.seed;
        Self::with_seed(spec, seed)
    }

    pub fn with_seed(mut spec: ModelSpec, seed: u64) -> Result<Self> {
        spec.validate()?;
        spec.seed = seed;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let params = param_layout(&spec)
            .into_iter()
            .map(|p| {
                let value = if p.is_bias {
                    Tensor::zeros(p.shape)
                } else {
                    let b = glorot_bound(p.fan_in, p.fan_out);
                    Tensor::uniform(p.shape, -b, b, &mut rng)
                };
                NamedParam {
                    name: p.name,
                    value,
                }
            })
            .collect();
        Self::from_parts(spec, params)
    }

    /// Assembles a model from explicit tensors, checking names and shapes against the spec.
    pub fn from_parts(spec: ModelSpec, params: Vec<NamedParam<T>>) -> Result<Self> {
        spec.validate()?;
        let layout = param_layout(&spec);
        if layout.len() != params.len() {
            return Err(Error::InvalidSpec(format!(
                "spec declares {} parameters, got {}",
                layout.len(),
                params.len()
            )));
        }
        for (info, p) in layout.iter().zip(&params) {
            if info.name != p.name || info.shape != p.value.shape() {
                return Err(Error::InvalidSpec(format!(
                    "parameter {} {:?} does not match {} {:?}",
                    p.name,
                    p.value.shape(),
                    info.name,
                    info.shape
                )));
            }
            if !p.value.all_finite() {
                return Err(Error::InvalidSpec(format!(
                    "parameter {} is not finite",
                    p.name
                )));
            }
        }
        let bottleneck = match spec.variant {
            Variant::PlainUnet => None,
            Variant::GacUnet => {
                let side = spec.bottleneck_size();
                let graph = build_grid_graph(side, side, spec.connectivity)?;
                Some(Arc::new(Bottleneck {
                    neighborhoods: Arc::new(graph.neighborhoods()),
                    laplacian: NormalizedLaplacian::new(&graph).scaled_operator(),
                }))
            }
        };
        Ok(Model {
            spec,
            params,
            bottleneck,
        })
    }

    pub fn spec(&self) -> &ModelSpec {
        &self.spec
    }

    pub fn params(&self) -> &[NamedParam<T>] {
        &self.params
    }

    pub fn param(&self, name: &str) -> Option<&Tensor<T>> {
        self.params
            .iter()
            .find(|p| p.name == name)
            .map(|p| &p.value)
    }

    pub fn param_count(&self) -> usize {
        self.params.iter().map(|p| p.value.len()).sum()
    }

    /// Replaces parameter values in order; shapes must match.
    pub fn set_params(&mut self, values: Vec<Tensor<T>>) -> Result<()> {
        if values.len() != self.params.len() {
            return Err(Error::invalid(
                "set_params",
                format!(
                    "expected {} tensors, got {}",
                    self.params.len(),
                    values.len()
                ),
            ));
        }
        for (p, v) in self.params.iter().zip(&values) {
            if p.value.shape() != v.shape() {
                return Err(Error::shape("set_params", p.value.shape(), v.shape()));
            }
        }
        for (p, v) in self.params.iter_mut().zip(values) {
            p.value = v;
        }
        Ok(())
    }

    /// Records every parameter as a tape leaf. Parameters for which `frozen`
    /// returns true become constants.
    pub fn bind(&self, tape: &mut Tape<T>, frozen: impl Fn(&str) -> bool) -> Vec<Var> {
        self.params
            .iter()
            .map(|p| tape.leaf(p.value.clone(), !frozen(&p.name)))
            .collect()
    }

    /// Forward pass of one `C×H×W` sample using parameter handles from [`bind`](Self::bind).
    pub fn forward(&self, tape: &mut Tape<T>, params: &[Var], input: Var) -> Result<Forward<T>> {
        if params.len() != self.params.len() {
            return Err(Error::invalid(
                "forward",
                format!(
                    "expected {} parameter handles, got {}",
                    self.params.len(),
                    params.len()
                ),
            ));
        }
        let n = self.spec.input_size;
        let expected = [self.spec.in_channels, n, n];
        if tape.shape(input) != expected {
            return Err(Error::shape("forward", tape.shape(input), &expected));
        }
        let slope = T::of(CONV_SLOPE);
        let mut next = params.iter().copied();
        let mut take = || next.next().expect("layout checked");

        let mut x = input;
        let mut encoder = Vec::with_capacity(self.spec.widths.len());
        for _ in &self.spec.widths {
            let (k, b) = (take(), take());
            let h = conv2d(tape, x, k, Some(b))?;
            let h = tape.leaky_relu(h, slope)?;
            let (k, b) = (take(), take());
            let h = dilated_conv2d(tape, h, k, Some(b), 2)?;
            let h = tape.leaky_relu(h, slope)?;
            encoder.push(h);
            x = tape.maxpool2(h)?;
        }

        let mut attention = None;
        if let Some(graph) = &self.bottleneck {
            let shape = tape.shape(x).to_vec();
            let (c, side) = (shape[0], shape[1]);
            let nodes = side * side;
            let flat = tape.reshape(x, &[c, nodes])?;
            let feats = tape.transpose(flat)?;
            let (w, a) = (take(), take());
            let gat = gat_conv(tape, feats, &graph.neighborhoods, w, a)?;
            attention = Some(gat.attention);
            let thetas: Vec<Var> = (0..=self.spec.cheb_order).map(|_| take()).collect();
            let h = cheb_conv(tape, gat.output, &graph.laplacian, &thetas)?;
            let h = tape.transpose(h)?;
            x = tape.reshape(h, &[self.spec.cheb_out, side, side])?;
            if self.spec.center_of_mass {
                x = center_of_mass(tape, x)?.augmented;
            }
        }
        let bottleneck = x;

        for skip in encoder.iter().rev() {
            let up = tape.upsample2(x)?;
            let cat = tape.concat(&[up, *skip], 0)?;
            let (k, b) = (take(), take());
            let h = conv2d(tape, cat, k, Some(b))?;
            x = tape.leaky_relu(h, slope)?;
        }
        let (k, b) = (take(), take());
        let logits = conv2d(tape, x, k, Some(b))?;
        let output = tape.sigmoid(logits)?;
        Ok(Forward {
            output,
            encoder,
            bottleneck,
            attention,
        })
    }

    /// Inference on one `C×H×W` tensor.
    pub fn predict(&self, input: &Tensor<T>) -> Result<Tensor<T>> {
        let mut tape = Tape::new();
        let params = self.bind(&mut tape, |_| true);
        let x = tape.constant(input.clone());
        let out = self.forward(&mut tape, &params, x)?.output;
        Ok(tape.value(out).clone())
    }

    /// Little-endian parameter bytes in declaration order.
    pub fn param_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(self.param_count() * T::BYTES);
        for p in &self.params {
            for &v in p.value.data() {
                v.write_le(&mut out);
            }
        }
        out
    }

    /// SHA-256 of the serialized model file, as lowercase hex.
    pub fn checksum(&self) -> String {
        hex::encode(Sha256::digest(self.to_bytes()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny(variant: Variant) -> ModelSpec {
        ModelSpec::new(variant, 16, vec![4, 6]).with_seed(3)
    }

    #[test]
    fn output_shape_and_range() {
        let model = Model::<f64>::build(tiny(Variant::GacUnet)).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let x = Tensor::uniform(vec![3, 16, 16], 0.0, 1.0, &mut rng);
        let y = model.predict(&x).unwrap();
        assert_eq!(y.shape(), &[1, 16, 16]);
        assert!(y.data().iter().all(|&v| v > 0.0 && v < 1.0));
    }

    #[test]
    fn names_are_unique_and_ordered() {
        let layout = param_layout(&tiny(Variant::GacUnet));
        let mut names: Vec<_> = layout.iter().map(|p| p.name.as_str()).collect();
        assert_eq!(names[0], "enc0.conv.weight");
        assert_eq!(*names.last().unwrap(), "head.bias");
        let n = names.len();
        names.sort();
        names.dedup();
        assert_eq!(names.len(), n);
    }

    #[test]
    fn graph_variant_is_larger() {
        let plain = ModelSpec::new(Variant::PlainUnet, 64, vec![8, 16]);
        let gac = ModelSpec::new(Variant::GacUnet, 64, vec![8, 16]);
        assert!(param_count(&gac) > param_count(&plain));
    }

    #[test]
    fn init_is_seeded() {
        let a = Model::<f32>::build(tiny(Variant::GacUnet)).unwrap();
        let b = Model::<f32>::build(tiny(Variant::GacUnet)).unwrap();
        let c = Model::<f32>::with_seed(tiny(Variant::GacUnet), 4).unwrap();
        assert_eq!(a.param_bytes(), b.param_bytes());
        assert_ne!(a.param_bytes(), c.param_bytes());
        assert!(a
            .param("head.bias")
            .unwrap()
            .data()
            .iter()
            .all(|&v| v == 0.0));
    }

    #[test]
    fn wrong_input_shape_is_rejected() {
        let model = Model::<f64>::build(tiny(Variant::PlainUnet)).unwrap();
        assert!(model.predict(&Tensor::zeros(vec![3, 8, 8])).is_err());
    }
}
