use super::Function;
use crate::error::{Error, Result};
use crate::nn::{self, ConvGeometry};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug)]
pub enum Elementwise {
    Add,
    Sub,
    Mul,
}

impl Function for Elementwise {
    fn name(&self) -> &'static str {
        match self {
            Elementwise::Add => "add",
            Elementwise::Sub => "sub",
            Elementwise::Mul => "mul",
        }
    }

    fn forward(&self, inputs: &[&Tensor]) -> Result<Tensor> {
        let [a, b] = inputs else {
            return Err(Error::Contract(format!("{} takes two inputs", self.name())));
        };
        match self {
            Elementwise::Add => a.add(b),
            Elementwise::Sub => a.sub(b),
            Elementwise::Mul => a.mul(b),
        }
    }

    fn backward(&self, inputs: &[&Tensor], _: &Tensor, grad: &Tensor) -> Result<Vec<Option<Tensor>>> {
        Ok(match self {
            Elementwise::Add => vec![Some(grad.clone()), Some(grad.clone())],
            Elementwise::Sub => vec![Some(grad.clone()), Some(grad.scale(-1.0))],
            Elementwise::Mul => vec![Some(grad.mul(inputs[1])?), Some(grad.mul(inputs[0])?)],
        })
    }
}

#[derive(Clone, Copy, Debug)]
pub struct Scale(pub f64);

impl Function for Scale {
    fn name(&self) -> &'static str {
        "scale"
    }

    fn forward(&self, inputs: &[&Tensor]) -> Result<Tensor> {
        Ok(inputs[0].scale(self.0))
    }

    fn backward(&self, _: &[&Tensor], _: &Tensor, grad: &Tensor) -> Result<Vec<Option<Tensor>>> {
        Ok(vec![Some(grad.scale(self.0))])
    }
}

#[derive(Clone, Copy, Debug)]
pub enum UnaryOp {
    Relu,
    Sigmoid,
    Exp,
}

impl Function for UnaryOp {
    fn name(&self) -> &'static str {
        match self {
            UnaryOp::Relu => "relu",
            UnaryOp::Sigmoid => "sigmoid",
            UnaryOp::Exp => "exp",
        }
    }

    fn forward(&self, inputs: &[&Tensor]) -> Result<Tensor> {
        let x = inputs[0];
        match self {
            UnaryOp::Relu => Ok(x.relu()),
            UnaryOp::Sigmoid => Ok(x.sigmoid()),
            UnaryOp::Exp => x.exp(),
        }
    }

    fn backward(&self, inputs: &[&Tensor], output: &Tensor, grad: &Tensor) -> Result<Vec<Option<Tensor>>> {
        let data: Vec<f64> = match self {
            // derivative at exactly zero is taken as 0
            UnaryOp::Relu => inputs[0]
                .data()
                .iter()
                .zip(grad.data())
                .map(|(&x, &g)| if x > 0.0 { g } else { 0.0 })
                .collect(),
            UnaryOp::Sigmoid => output
                .data()
                .iter()
                .zip(grad.data())
                .map(|(&s, &g)| g * s * (1.0 - s))
                .collect(),
            UnaryOp::Exp => output.data().iter().zip(grad.data()).map(|(&e, &g)| g * e).collect(),
        };
        Ok(vec![Some(Tensor::from_parts(grad.shape().clone(), data))])
    }
}

#[derive(Clone, Copy, Debug)]
pub struct MatMul;

impl Function for MatMul {
    fn name(&self) -> &'static str {
        "matmul"
    }

    fn forward(&self, inputs: &[&Tensor]) -> Result<Tensor> {
        inputs[0].matmul(inputs[1])
    }

    fn backward(&self, inputs: &[&Tensor], _: &Tensor, grad: &Tensor) -> Result<Vec<Option<Tensor>>> {
        let (a, b) = (inputs[0], inputs[1]);
        Ok(vec![
            Some(grad.matmul(&b.transpose()?)?),
            Some(a.transpose()?.matmul(grad)?),
        ])
    }
}

#[derive(Clone, Copy, Debug)]
pub struct Sum;

impl Function for Sum {
    fn name(&self) -> &'static str {
        "sum"
    }

    fn forward(&self, inputs: &[&Tensor]) -> Result<Tensor> {
        Ok(Tensor::scalar(inputs[0].sum()))
    }

    fn backward(&self, inputs: &[&Tensor], _: &Tensor, grad: &Tensor) -> Result<Vec<Option<Tensor>>> {
        Ok(vec![Some(Tensor::full(inputs[0].dims(), grad.item()?)?)])
    }
}

#[derive(Clone, Debug)]
pub struct Reshape(pub Vec<usize>);

impl Function for Reshape {
    fn name(&self) -> &'static str {
        "reshape"
    }

    fn forward(&self, inputs: &[&Tensor]) -> Result<Tensor> {
        inputs[0].reshape(&self.0)
    }

    fn backward(&self, inputs: &[&Tensor], _: &Tensor, grad: &Tensor) -> Result<Vec<Option<Tensor>>> {
        Ok(vec![Some(grad.reshape(inputs[0].dims())?)])
    }
}

#[derive(Clone, Copy, Debug)]
pub struct GlobalAveragePool;

impl Function for GlobalAveragePool {
    fn name(&self) -> &'static str {
        "global_average_pool"
    }

    fn forward(&self, inputs: &[&Tensor]) -> Result<Tensor> {
        inputs[0].global_average_pool()
    }

    fn backward(&self, inputs: &[&Tensor], _: &Tensor, grad: &Tensor) -> Result<Vec<Option<Tensor>>> {
        let x = inputs[0];
        let plane = x.dims()[2] * x.dims()[3];
        let inv = 1.0 / plane as f64;
        let data = grad
            .data()
            .iter()
            .flat_map(|&g| std::iter::repeat_n(g * inv, plane))
            .collect();
        Ok(vec![Some(Tensor::from_parts(x.shape().clone(), data))])
    }
}

#[derive(Clone, Copy, Debug)]
pub struct FullyConnected;

impl Function for FullyConnected {
    fn name(&self) -> &'static str {
        "fully_connected"
    }

    fn forward(&self, inputs: &[&Tensor]) -> Result<Tensor> {
        nn::fully_connected(inputs[0], inputs[1])
    }

    fn backward(&self, inputs: &[&Tensor], _: &Tensor, grad: &Tensor) -> Result<Vec<Option<Tensor>>> {
        let (x, w) = (inputs[0], inputs[1]);
        // out = x · wᵀ: dx = g · w, dw = gᵀ · x
        Ok(vec![Some(grad.matmul(w)?), Some(grad.transpose()?.matmul(x)?)])
    }
}

#[derive(Clone, Copy, Debug)]
pub struct Conv2d(pub ConvGeometry);

impl Function for Conv2d {
    fn name(&self) -> &'static str {
        "conv2d"
    }

    fn forward(&self, inputs: &[&Tensor]) -> Result<Tensor> {
        nn::conv2d(inputs[0], inputs[1], &self.0)
    }

    fn backward(&self, inputs: &[&Tensor], _: &Tensor, grad: &Tensor) -> Result<Vec<Option<Tensor>>> {
        let (gx, gw) = nn::conv_backward(inputs[0], inputs[1], grad, &self.0, false)?;
        Ok(vec![Some(gx), Some(gw)])
    }
}

#[derive(Clone, Copy, Debug)]
pub struct Conv2dPerSample(pub ConvGeometry);

impl Function for Conv2dPerSample {
    fn name(&self) -> &'static str {
        "conv2d_per_sample"
    }

    fn forward(&self, inputs: &[&Tensor]) -> Result<Tensor> {
        nn::conv2d_per_sample(inputs[0], inputs[1], &self.0)
    }

    fn backward(&self, inputs: &[&Tensor], _: &Tensor, grad: &Tensor) -> Result<Vec<Option<Tensor>>> {
        let (gx, gw) = nn::conv_backward(inputs[0], inputs[1], grad, &self.0, true)?;
        Ok(vec![Some(gx), Some(gw)])
    }
}

/// Row-wise softmax of `z / T`; the VJP is the fused `(g - <g, s>) ⊙ s / T`.
#[derive(Clone, Copy, Debug)]
pub struct SoftmaxT(pub f64);

impl Function for SoftmaxT {
    fn name(&self) -> &'static str {
        "softmax"
    }

    fn forward(&self, inputs: &[&Tensor]) -> Result<Tensor> {
        nn::softmax_with_temperature(inputs[0], self.0)
    }

    fn backward(&self, _: &[&Tensor], output: &Tensor, grad: &Tensor) -> Result<Vec<Option<Tensor>>> {
        let d = output.dims()[1];
        let mut data = Vec::with_capacity(output.len());
        for (s, g) in output.data().chunks_exact(d).zip(grad.data().chunks_exact(d)) {
            let dot: f64 = s.iter().zip(g).map(|(a, b)| a * b).sum();
            data.extend(s.iter().zip(g).map(|(&si, &gi)| (gi - dot) * si / self.0));
        }
        Ok(vec![Some(Tensor::from_parts(output.shape().clone(), data))])
    }
}

#[derive(Clone, Copy, Debug)]
pub struct AvgPool2d {
    pub k: usize,
    pub stride: usize,
}

impl Function for AvgPool2d {
    fn name(&self) -> &'static str {
        "avg_pool2d"
    }

    fn forward(&self, inputs: &[&Tensor]) -> Result<Tensor> {
        nn::avg_pool2d(inputs[0], self.k, self.stride)
    }

    fn backward(&self, inputs: &[&Tensor], _: &Tensor, grad: &Tensor) -> Result<Vec<Option<Tensor>>> {
        Ok(vec![Some(nn::avg_pool2d_backward(
            inputs[0].shape(),
            grad,
            self.k,
            self.stride,
        ))])
    }
}

/// Mean softmax cross-entropy against integer labels.
#[derive(Clone, Debug)]
pub struct CrossEntropy(pub Vec<usize>);

impl Function for CrossEntropy {
    fn name(&self) -> &'static str {
        "cross_entropy"
    }

    fn forward(&self, inputs: &[&Tensor]) -> Result<Tensor> {
        Ok(Tensor::scalar(nn::cross_entropy(inputs[0], &self.0)?))
    }

    fn backward(&self, inputs: &[&Tensor], _: &Tensor, grad: &Tensor) -> Result<Vec<Option<Tensor>>> {
        let (_, probs) = nn::log_softmax_rows(inputs[0], &self.0)?;
        let classes = probs.dims()[1];
        let scale = grad.item()? / self.0.len() as f64;
        let mut data = probs.into_data();
        for (row, &label) in data.chunks_exact_mut(classes).zip(&self.0) {
            row[label] -= 1.0;
            row.iter_mut().for_each(|v| *v *= scale);
        }
        Ok(vec![Some(Tensor::from_parts(inputs[0].shape().clone(), data))])
    }
}

#[derive(Clone, Copy, Debug)]
pub struct SampleNorm(pub f64);

impl Function for SampleNorm {
    fn name(&self) -> &'static str {
        "sample_norm"
    }

    fn forward(&self, inputs: &[&Tensor]) -> Result<Tensor> {
        nn::sample_norm(inputs[0], self.0)
    }

    fn backward(&self, inputs: &[&Tensor], output: &Tensor, grad: &Tensor) -> Result<Vec<Option<Tensor>>> {
        // dx = (g - mean(g) - y * mean(g * y)) / sigma, per sample
        let x = inputs[0];
        let per = x.len() / x.dims()[0];
        let mut gx = Vec::with_capacity(x.len());
        for ((xr, yr), gr) in x
            .data()
            .chunks_exact(per)
            .zip(output.data().chunks_exact(per))
            .zip(grad.data().chunks_exact(per))
        {
            let (_, inv_std) = nn::moments(xr, self.0);
            let n = per as f64;
            let g_mean = gr.iter().sum::<f64>() / n;
            let gy_mean = gr.iter().zip(yr).map(|(g, y)| g * y).sum::<f64>() / n;
            gx.extend(gr.iter().zip(yr).map(|(g, y)| (g - g_mean - y * gy_mean) * inv_std));
        }
        Ok(vec![Some(Tensor::from_vec(x.dims(), gx)?)])
    }
}
