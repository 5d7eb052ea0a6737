//! Binary model snapshots.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! "DEMP"                      magic
//! u32                         version (1)
//! u64                         revision
//! u32, u64 * rank             input shape
//! u32                         layer count
//! per layer: u8 tag + fields  layer table
//!   0 dense      u64 inputs, u64 outputs
//!   1 conv2d     u64 in, out, kernel_h, kernel_w, stride, padding
//!   2 batchnorm  u64 channels
//!   3 activation u8 kind (0 relu, 1 leaky, 2 swish, 3 gelu, 4 identity), f64 param
//! f64 blobs                   per layer in table order:
//!   dense/conv: weight, bias; batchnorm: gamma, beta, running mean, running var
//! ```

use std::io::Write;
use std::path::Path;

use super::activation::Activation;
use super::layer::{BatchNorm, Conv2d, Dense, Layer, LayerSpec};
use super::network::Network;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const MAGIC: &[u8; 4] = b"DEMP";
pub const VERSION: u32 = 1;

pub fn to_bytes(net: &Network) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&net.revision().to_le_bytes());
    out.extend_from_slice(&(net.input_shape().len() as u32).to_le_bytes());
    for &d in net.input_shape() {
        out.extend_from_slice(&(d as u64).to_le_bytes());
    }
    out.extend_from_slice(&(net.layers().len() as u32).to_le_bytes());
    let u64s = |out: &mut Vec<u8>, vals: &[usize]| {
        for &v in vals {
            out.extend_from_slice(&(v as u64).to_le_bytes());
        }
    };
    for layer in net.layers() {
        match layer.spec() {
            LayerSpec::Dense { inputs, outputs } => {
                out.push(0);
                u64s(&mut out, &[inputs, outputs]);
            }
            LayerSpec::Conv2d { in_channels, out_channels, kernel_h, kernel_w, stride, padding } => {
                out.push(1);
                u64s(&mut out, &[in_channels, out_channels, kernel_h, kernel_w, stride, padding]);
            }
            LayerSpec::BatchNorm { channels } => {
                out.push(2);
                u64s(&mut out, &[channels]);
            }
            LayerSpec::Activation(a) => {
                out.push(3);
                out.push(match a {
                    Activation::Relu => 0,
                    Activation::LeakyRelu { .. } => 1,
                    Activation::Swish { .. } => 2,
                    Activation::Gelu => 3,
                    Activation::Identity => 4,
                });
                out.extend_from_slice(&a.param().to_le_bytes());
            }
        }
    }
    for layer in net.layers() {
        let tensors: Vec<&Tensor> = match layer {
            Layer::BatchNorm(b) => vec![&b.gamma, &b.beta, &b.running_mean, &b.running_var],
            other => other.params(),
        };
        for t in tensors {
            for v in t.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
    }
    out
}

pub fn save(net: &Network, path: &Path) -> Result<()> {
    let mut f = std::fs::File::create(path)?;
    f.write_all(&to_bytes(net))?;
    Ok(())
}

pub fn load(path: &Path) -> Result<Network> {
    from_bytes(&std::fs::read(path)?)
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.buf.len() {
            return Err(Error::Snapshot(format!("truncated at byte {}", self.pos)));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }
    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }
    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
    fn usize(&mut self) -> Result<usize> {
        usize::try_from(self.u64()?).map_err(|_| Error::Snapshot("dimension overflow".into()))
    }
    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
    fn tensor(&mut self, shape: &[usize]) -> Result<Tensor> {
        let n: usize = shape.iter().product();
        let bytes = self.take(n.checked_mul(8).ok_or_else(|| Error::Snapshot("size overflow".into()))?)?;
        let data = bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        Tensor::new(shape.to_vec(), data)
    }
}

pub fn from_bytes(buf: &[u8]) -> Result<Network> {
    let mut r = Reader { buf, pos: 0 };
    if r.take(4)? != MAGIC {
        return Err(Error::Snapshot("bad magic".into()));
    }
    let version = r.u32()?;
    if version != VERSION {
        return Err(Error::Snapshot(format!("unsupported version {version}")));
    }
    let revision = r.u64()?;
    let rank = r.u32()? as usize;
    let input_shape = (0..rank).map(|_| r.usize()).collect::<Result<Vec<_>>>()?;
    let count = r.u32()? as usize;
    let mut specs = Vec::with_capacity(count);
    for _ in 0..count {
        specs.push(match r.u8()? {
            0 => LayerSpec::Dense { inputs: r.usize()?, outputs: r.usize()? },
            1 => LayerSpec::Conv2d {
                in_channels: r.usize()?,
                out_channels: r.usize()?,
                kernel_h: r.usize()?,
                kernel_w: r.usize()?,
                stride: r.usize()?,
                padding: r.usize()?,
            },
            2 => LayerSpec::BatchNorm { channels: r.usize()? },
            3 => {
                let kind = r.u8()?;
                let p = r.f64()?;
                LayerSpec::Activation(match kind {
                    0 => Activation::Relu,
                    1 => Activation::LeakyRelu { alpha: p },
                    2 => Activation::Swish { beta: p },
                    3 => Activation::Gelu,
                    4 => Activation::Identity,
                    k => return Err(Error::Snapshot(format!("unknown activation {k}"))),
                })
            }
            t => return Err(Error::Snapshot(format!("unknown layer tag {t}"))),
        });
    }
    let mut layers = Vec::with_capacity(count);
    for spec in specs {
        layers.push(match spec {
            LayerSpec::Dense { inputs, outputs } => {
                let w = r.tensor(&[outputs, inputs])?;
                let b = r.tensor(&[outputs])?;
                Layer::Dense(Dense::new(w, b)?)
            }
            LayerSpec::Conv2d { in_channels, out_channels, kernel_h, kernel_w, stride, padding } => {
                let w = r.tensor(&[out_channels, in_channels, kernel_h, kernel_w])?;
                let b = r.tensor(&[out_channels])?;
                Layer::Conv2d(Conv2d::new(w, b, stride, padding)?)
            }
            LayerSpec::BatchNorm { channels } => {
                let mut bn = BatchNorm::new(channels);
                bn.gamma = r.tensor(&[channels])?;
                bn.beta = r.tensor(&[channels])?;
                bn.running_mean = r.tensor(&[channels])?;
                bn.running_var = r.tensor(&[channels])?;
                Layer::BatchNorm(bn)
            }
            LayerSpec::Activation(a) => Layer::Activation(a),
        });
    }
    if r.pos != buf.len() {
        return Err(Error::Snapshot(format!("{} trailing bytes", buf.len() - r.pos)));
    }
    let mut net = Network::from_layers(input_shape, layers)?;
    net.set_revision(revision);
    Ok(net)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{Mode, NetworkBuilder};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn round_trip_preserves_outputs() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let net = NetworkBuilder::new(&[2, 5, 5])
            .conv2d(3, (3, 3), 2, 1, &mut rng)
            .batch_norm()
            .activation(Activation::swish())
            .dense(4, &mut rng)
            .activation(Activation::leaky_relu())
            .dense(2, &mut rng)
            .build()
            .unwrap();
        let bytes = to_bytes(&net);
        assert_eq!(&bytes[..4], b"DEMP");
        let back = from_bytes(&bytes).unwrap();
        assert_eq!(back, net);
        let x = Tensor::new(vec![2, 2, 5, 5], (0..100).map(|i| (i as f64).sin()).collect()).unwrap();
        assert_eq!(net.forward(&x, Mode::Train).unwrap().0, back.forward(&x, Mode::Train).unwrap().0);
    }

    #[test]
    fn rejects_corruption() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let net = crate::nn::mlp(&[2], &[3], 1, Activation::Relu, true, &mut rng).unwrap();
        let mut bytes = to_bytes(&net);
        assert!(from_bytes(&bytes[..bytes.len() - 1]).is_err());
        bytes[0] = b'X';
        assert!(from_bytes(&bytes).is_err());
    }
}
