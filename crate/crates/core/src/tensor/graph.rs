use super::conv::{self, ConvParams};
use super::{ensure_same_shape, Scalar, Tensor};
use crate::error::{Error, Result};

/// Handle to a value recorded on a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Debug)]
enum Op<F> {
    Leaf,
    Conv3d {
        input: Var,
        kernel: Var,
        params: ConvParams,
    },
    ConvTranspose3d {
        input: Var,
        kernel: Var,
        params: ConvParams,
    },
    ChannelBias {
        input: Var,
        bias: Var,
    },
    LeakyRelu {
        input: Var,
        slope: F,
    },
    Sigmoid(Var),
    Add(Var, Var),
    Sub(Var, Var),
    MulScalar(Var, F),
    Mse {
        pred: Var,
        target: Var,
    },
    Sum(Var),
}

#[derive(Clone, Debug)]
struct Node<F> {
    value: Tensor<F>,
    op: Op<F>,
    requires_grad: bool,
    parameter: bool,
}

/// Ordered record of executed operations.
///
/// Nodes are appended in execution order, so the record is already
/// topologically sorted and a single reverse sweep visits every operation
/// once. Gradients are stored on the recorded tensors.
#[derive(Clone, Debug, Default)]
pub struct Graph<F: Scalar = f32> {
    nodes: Vec<Node<F>>,
}

impl<F: Scalar> Graph<F> {
    pub fn new() -> Self {
        Self { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor<F>, op: Op<F>, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
            parameter: false,
        });
        Var(self.nodes.len() - 1)
    }

    /// Records a value that gradients do not flow into.
    pub fn constant(&mut self, value: Tensor<F>) -> Var {
        self.push(value, Op::Leaf, false)
    }

    /// Records a trainable leaf; it receives a gradient on every backward.
    pub fn parameter(&mut self, value: Tensor<F>) -> Var {
        let v = self.push(value, Op::Leaf, true);
        self.nodes[v.0].parameter = true;
        v
    }

    pub fn value(&self, v: Var) -> &Tensor<F> {
        &self.nodes[v.0].value
    }

    pub fn grad(&self, v: Var) -> Option<&[F]> {
        self.nodes[v.0].value.grad()
    }

    pub fn parameters(&self) -> impl Iterator<Item = Var> + '_ {
        self.nodes
            .iter()
            .enumerate()
            .filter(|(_, n)| n.parameter)
            .map(|(i, _)| Var(i))
    }

    fn needs(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].requires_grad)
    }

    pub fn conv3d(&mut self, input: Var, kernel: Var, params: ConvParams) -> Result<Var> {
        let out = conv::conv3d(self.value(input), self.value(kernel), &params)?;
        let rg = self.needs(&[input, kernel]);
        Ok(self.push(
            out,
            Op::Conv3d {
                input,
                kernel,
                params,
            },
            rg,
        ))
    }

    pub fn conv_transpose3d(&mut self, input: Var, kernel: Var, params: ConvParams) -> Result<Var> {
        let out = conv::conv_transpose3d(self.value(input), self.value(kernel), &params)?;
        let rg = self.needs(&[input, kernel]);
        Ok(self.push(
            out,
            Op::ConvTranspose3d {
                input,
                kernel,
                params,
            },
            rg,
        ))
    }

    /// Adds `bias[c]` to every element of channel `c` of a `[N,T,C,H,W]` tensor.
    pub fn channel_bias(&mut self, input: Var, bias: Var) -> Result<Var> {
        let x = self.value(input);
        let b = self.value(bias);
        let (outer, channels, inner) = channel_split(x.shape())?;
        if b.len() != channels {
            return Err(Error::shape(
                "channel_bias",
                format!("{} bias values for {channels} channels", b.len()),
            ));
        }
        let mut out = x.data().to_vec();
        for block in out.chunks_exact_mut(channels * inner).take(outer) {
            for (plane, &bc) in block.chunks_exact_mut(inner).zip(b.data()) {
                plane.iter_mut().for_each(|v| *v = *v + bc);
            }
        }
        let out = Tensor::new(x.shape().to_vec(), out)?;
        let rg = self.needs(&[input, bias]);
        Ok(self.push(out, Op::ChannelBias { input, bias }, rg))
    }

    fn unary(&mut self, input: Var, op: Op<F>, f: impl Fn(F) -> F) -> Var {
        let x = self.value(input);
        let data = x.data().iter().map(|&v| f(v)).collect();
        let out = Tensor::new(x.shape().to_vec(), data).expect("same extents");
        let rg = self.needs(&[input]);
        self.push(out, op, rg)
    }

    pub fn relu(&mut self, input: Var) -> Var {
        self.leaky_relu(input, F::zero())
    }

    pub fn leaky_relu(&mut self, input: Var, slope: F) -> Var {
        self.unary(input, Op::LeakyRelu { input, slope }, |v| {
            if v > F::zero() {
                v
            } else {
                v * slope
            }
        })
    }

    pub fn sigmoid(&mut self, input: Var) -> Var {
        self.unary(input, Op::Sigmoid(input), |v| F::one() / (F::one() + (-v).exp()))
    }

    pub fn mul_scalar(&mut self, input: Var, k: F) -> Var {
        self.unary(input, Op::MulScalar(input, k), |v| v * k)
    }

    fn binary(&mut self, a: Var, b: Var, name: &'static str, op: Op<F>, f: impl Fn(F, F) -> F) -> Result<Var> {
        let (x, y) = (self.value(a), self.value(b));
        ensure_same_shape(name, x.shape(), y.shape())?;
        let data = x.data().iter().zip(y.data()).map(|(&p, &q)| f(p, q)).collect();
        let out = Tensor::new(x.shape().to_vec(), data)?;
        let rg = self.needs(&[a, b]);
        Ok(self.push(out, op, rg))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, "add", Op::Add(a, b), |p, q| p + q)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, "sub", Op::Sub(a, b), |p, q| p - q)
    }

    /// Mean of squared differences over every element.
    pub fn mse_loss(&mut self, pred: Var, target: Var) -> Result<Var> {
        let (p, t) = (self.value(pred), self.value(target));
        ensure_same_shape("mse_loss", p.shape(), t.shape())?;
        let loss = mean_squared_error(p.data(), t.data());
        let rg = self.needs(&[pred, target]);
        Ok(self.push(Tensor::scalar(loss), Op::Mse { pred, target }, rg))
    }

    pub fn sum(&mut self, input: Var) -> Var {
        let s = self.value(input).data().iter().copied().sum();
        let rg = self.needs(&[input]);
        self.push(Tensor::scalar(s), Op::Sum(input), rg)
    }

    /// Populates gradients of `loss` with respect to every recorded value that
    /// requires them. Parameters the loss does not depend on get zeros.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        let node = &self.nodes[loss.0];
        if !node.requires_grad {
            return Err(Error::Detached);
        }
        if node.value.len() != 1 {
            return Err(Error::NonScalarLoss(node.value.shape().to_vec()));
        }
        for n in &mut self.nodes {
            n.value.take_grad();
        }
        self.nodes[loss.0].value.set_grad(vec![F::one()]);
        for i in (0..=loss.0).rev() {
            if !self.nodes[i].requires_grad {
                continue;
            }
            let Some(grad) = self.nodes[i].value.take_grad() else {
                continue;
            };
            let contributions = self.local_grads(i, &grad)?;
            self.nodes[i].value.set_grad(grad);
            for (target, g) in contributions {
                let node = &mut self.nodes[target.0];
                if !node.requires_grad {
                    continue;
                }
                let acc = node.value.grad_mut_or_zero();
                acc.iter_mut().zip(&g).for_each(|(a, v)| *a = *a + *v);
            }
        }
        for n in self.nodes.iter_mut().filter(|n| n.parameter) {
            n.value.grad_mut_or_zero();
        }
        Ok(())
    }

    fn local_grads(&self, i: usize, grad: &[F]) -> Result<Vec<(Var, Vec<F>)>> {
        let node = &self.nodes[i];
        let wants = |v: Var| self.nodes[v.0].requires_grad;
        let mut out = Vec::with_capacity(2);
        match node.op {
            Op::Leaf => {}
            Op::Conv3d {
                input,
                kernel,
                params,
            } => {
                let (dx, dk) = conv::conv3d_backward(
                    self.value(input),
                    self.value(kernel),
                    grad,
                    &params,
                    wants(input),
                )?;
                out.push((kernel, dk));
                out.extend(dx.map(|dx| (input, dx)));
            }
            Op::ConvTranspose3d {
                input,
                kernel,
                params,
            } => {
                let (dx, dk) = conv::conv_transpose3d_backward(
                    self.value(input),
                    self.value(kernel),
                    grad,
                    &params,
                    wants(input),
                )?;
                out.push((kernel, dk));
                out.extend(dx.map(|dx| (input, dx)));
            }
            Op::ChannelBias { input, bias } => {
                let (outer, channels, inner) = channel_split(self.value(input).shape())?;
                let mut db = vec![F::zero(); channels];
                for block in grad.chunks_exact(channels * inner).take(outer) {
                    for (plane, acc) in block.chunks_exact(inner).zip(db.iter_mut()) {
                        *acc = *acc + plane.iter().copied().sum();
                    }
                }
                out.push((bias, db));
                if wants(input) {
                    out.push((input, grad.to_vec()));
                }
            }
            Op::LeakyRelu { input, slope } => {
                let x = self.value(input).data();
                let dx = x
                    .iter()
                    .zip(grad)
                    .map(|(&v, &g)| if v > F::zero() { g } else { g * slope })
                    .collect();
                out.push((input, dx));
            }
            Op::Sigmoid(input) => {
                let y = node.value.data();
                let dx = y
                    .iter()
                    .zip(grad)
                    .map(|(&s, &g)| g * s * (F::one() - s))
                    .collect();
                out.push((input, dx));
            }
            Op::Add(a, b) => {
                out.push((a, grad.to_vec()));
                out.push((b, grad.to_vec()));
            }
            Op::Sub(a, b) => {
                out.push((a, grad.to_vec()));
                out.push((b, grad.iter().map(|&g| -g).collect()));
            }
            Op::MulScalar(input, k) => {
                out.push((input, grad.iter().map(|&g| g * k).collect()));
            }
            Op::Mse { pred, target } => {
                let p = self.value(pred).data();
                let t = self.value(target).data();
                let scale = F::from_f64_lossy(2.0) / F::from_usize(p.len()).expect("len") * grad[0];
                let dp: Vec<F> = p.iter().zip(t).map(|(&a, &b)| (a - b) * scale).collect();
                if wants(target) {
                    out.push((target, dp.iter().map(|&g| -g).collect()));
                }
                out.push((pred, dp));
            }
            Op::Sum(input) => {
                out.push((input, vec![grad[0]; self.value(input).len()]));
            }
        }
        Ok(out)
    }
}

fn channel_split(shape: &[usize]) -> Result<(usize, usize, usize)> {
    if shape.len() != 5 {
        return Err(Error::shape(
            "channel_bias",
            format!("expected [N,T,C,H,W], got {shape:?}"),
        ));
    }
    Ok((shape[0] * shape[1], shape[2], shape[3] * shape[4]))
}

/// Mean of squared differences, accumulated in index order.
pub fn mean_squared_error<F: Scalar>(a: &[F], b: &[F]) -> F {
    if a.is_empty() {
        return F::zero();
    }
    let sum = a
        .iter()
        .zip(b)
        .fold(F::zero(), |acc, (&x, &y)| acc + (x - y) * (x - y));
    sum / F::from_usize(a.len()).expect("len")
}

#[cfg(test)]
mod tests {
    use super::*;

    fn vec_tensor(values: &[f64]) -> Tensor<f64> {
        Tensor::new(vec![values.len()], values.to_vec()).unwrap()
    }

    #[test]
    fn relu_and_sigmoid_values() {
        let mut g = Graph::<f64>::new();
        let x = g.constant(vec_tensor(&[-1.0, 2.0, 0.0]));
        let r = g.relu(x);
        assert_eq!(g.value(r).data(), &[0.0, 2.0, 0.0]);
        let s = g.sigmoid(x);
        assert_eq!(g.value(s).data()[2], 0.5);
        let l = g.leaky_relu(x, 0.2);
        assert_eq!(g.value(l).data(), &[-0.2, 2.0, 0.0]);
    }

    #[test]
    fn sigmoid_gradient_at_zero_matches_finite_difference() {
        let mut g = Graph::<f64>::new();
        let x = g.parameter(vec_tensor(&[0.0]));
        let s = g.sigmoid(x);
        let loss = g.sum(s);
        g.backward(loss).unwrap();
        let analytic = g.grad(x).unwrap()[0];
        let h = 1e-4;
        let sig = |v: f64| 1.0 / (1.0 + (-v).exp());
        let numeric = (sig(h) - sig(-h)) / (2.0 * h);
        assert!((analytic - 0.25).abs() < 1e-12);
        assert!((analytic - numeric).abs() < 1e-8);
    }

    #[test]
    fn sum_gradient_is_ones() {
        let mut g = Graph::<f64>::new();
        let x = g.parameter(vec_tensor(&[1.0, -3.0, 7.0]));
        let s = g.sum(x);
        g.backward(s).unwrap();
        assert_eq!(g.grad(x).unwrap(), &[1.0, 1.0, 1.0]);
    }

    #[test]
    fn mse_of_scalar_three_against_zero() {
        let mut g = Graph::<f64>::new();
        let x = g.parameter(vec_tensor(&[3.0]));
        let z = g.constant(vec_tensor(&[0.0]));
        let l = g.mse_loss(x, z).unwrap();
        assert_eq!(g.value(l).item(), Some(9.0));
        g.backward(l).unwrap();
        assert_eq!(g.grad(x).unwrap(), &[6.0]);
    }

    #[test]
    fn mse_values() {
        let mut g = Graph::<f64>::new();
        let a = g.constant(vec_tensor(&[0.5, 0.2, 0.9]));
        let b = g.constant(vec_tensor(&[0.4, 0.1, 0.8]));
        let l = g.mse_loss(a, a).unwrap();
        assert_eq!(g.value(l).item(), Some(0.0));
        let l = g.mse_loss(a, b).unwrap();
        assert!((g.value(l).item().unwrap() - 0.01).abs() < 1e-12);
    }

    #[test]
    fn backward_on_constant_is_detached() {
        let mut g = Graph::<f64>::new();
        let x = g.constant(vec_tensor(&[1.0]));
        let s = g.sum(x);
        assert!(matches!(g.backward(s), Err(Error::Detached)));
    }

    #[test]
    fn shape_mismatch_in_binary_ops() {
        let mut g = Graph::<f64>::new();
        let a = g.constant(vec_tensor(&[1.0, 2.0]));
        let b = g.constant(vec_tensor(&[1.0]));
        assert!(g.add(a, b).is_err());
        assert!(g.sub(a, b).is_err());
        assert!(g.mse_loss(a, b).is_err());
    }

    #[test]
    fn unused_parameters_get_zero_gradients() {
        let mut g = Graph::<f64>::new();
        let used = g.parameter(vec_tensor(&[2.0]));
        let unused = g.parameter(vec_tensor(&[5.0, 5.0]));
        let s = g.sum(used);
        g.backward(s).unwrap();
        assert_eq!(g.grad(unused).unwrap(), &[0.0, 0.0]);
    }

    #[test]
    fn shared_input_accumulates() {
        // d/dx sum(x + x - 0.5x) = 1.5
        let mut g = Graph::<f64>::new();
        let x = g.parameter(vec_tensor(&[1.0, 2.0]));
        let y = g.add(x, x).unwrap();
        let h = g.mul_scalar(x, 0.5);
        let z = g.sub(y, h).unwrap();
        let s = g.sum(z);
        g.backward(s).unwrap();
        assert_eq!(g.grad(x).unwrap(), &[1.5, 1.5]);
    }
}
