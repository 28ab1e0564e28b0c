//! Binary model checkpoints: layer descriptors plus parameter tensors,
//! with landmarks stored by sidecar reference.

use crate::error::{Error, Result};
use crate::features::{load_landmarks, save_landmarks, FastfoodBlock};
use crate::nn::layers::{
    Activation, DenseLayer, FriedLayer, Layer, LayerStack, MultiKernelLayer, NystromLayer,
};
use crate::tensor::{Matrix, Vector};
use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

const CHECKPOINT_MAGIC: u32 = 0x4e59_434b; // "NYCK"
const CHECKPOINT_VERSION: u32 = 1;

const TAG_NYSTROM: u8 = 0;
const TAG_MULTI: u8 = 1;
const TAG_DENSE: u8 = 2;
const TAG_FRIED: u8 = 3;

/// Write the stack to `path`. Each landmark set becomes a sidecar file next
/// to the checkpoint (`<stem>.lm<N>.nyls`), referenced by file name.
pub fn save_checkpoint(stack: &LayerStack, path: &Path) -> Result<()> {
    let dir = path.parent().unwrap_or_else(|| Path::new("."));
    let stem = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "model".into());
    let mut w = BufWriter::new(std::fs::File::create(path)?);
    w.write_u32::<LittleEndian>(CHECKPOINT_MAGIC)?;
    w.write_u32::<LittleEndian>(CHECKPOINT_VERSION)?;
    w.write_u32::<LittleEndian>(stack.layers().len() as u32)?;
    let mut sidecar_counter = 0u32;
    let mut write_nystrom = |w: &mut BufWriter<std::fs::File>, l: &NystromLayer| -> Result<()> {
        let sidecar_name = format!("{stem}.lm{sidecar_counter}.nyls");
        sidecar_counter += 1;
        save_landmarks(&l.landmarks, &dir.join(&sidecar_name))?;
        w.write_u8(u8::from(l.adaptive))?;
        write_string(w, &sidecar_name)?;
        write_matrix(w, &l.w)?;
        Ok(())
    };
    for layer in stack.layers() {
        match layer {
            Layer::Nystrom(l) => {
                w.write_u8(TAG_NYSTROM)?;
                write_nystrom(&mut w, l)?;
            }
            Layer::MultiKernel(l) => {
                w.write_u8(TAG_MULTI)?;
                w.write_u32::<LittleEndian>(l.sublayers.len() as u32)?;
                match &l.group_slices {
                    Some(slices) => {
                        w.write_u8(1)?;
                        for sl in slices {
                            w.write_u32::<LittleEndian>(sl.start as u32)?;
                            w.write_u32::<LittleEndian>(sl.end as u32)?;
                        }
                    }
                    None => w.write_u8(0)?,
                }
                for sub in &l.sublayers {
                    write_nystrom(&mut w, sub)?;
                }
            }
            Layer::Dense(l) => {
                w.write_u8(TAG_DENSE)?;
                w.write_u8(match l.activation {
                    Activation::None => 0,
                    Activation::Relu => 1,
                })?;
                write_matrix(&mut w, &l.weight)?;
                for &v in l.bias.data() {
                    w.write_f64::<LittleEndian>(v)?;
                }
            }
            Layer::Fried(l) => {
                w.write_u8(TAG_FRIED)?;
                w.write_u8(u8::from(l.adaptive))?;
                w.write_u32::<LittleEndian>(l.blocks.len() as u32)?;
                for b in &l.blocks {
                    w.write_u32::<LittleEndian>(b.d_pad as u32)?;
                    w.write_f64::<LittleEndian>(b.sigma)?;
                    for diag in [&b.s_diag, &b.g_diag, &b.b_diag] {
                        for &v in diag.data() {
                            w.write_f64::<LittleEndian>(v)?;
                        }
                    }
                    for &p in &b.perm {
                        w.write_u64::<LittleEndian>(p as u64)?;
                    }
                }
            }
        }
    }
    w.flush()?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<LayerStack> {
    let dir = path.parent().unwrap_or_else(|| Path::new("."));
    let ctx = || format!("checkpoint {}", path.display());
    let mut r = BufReader::new(std::fs::File::open(path)?);
    let magic = r
        .read_u32::<LittleEndian>()
        .map_err(|_| Error::Truncated(ctx()))?;
    if magic != CHECKPOINT_MAGIC {
        return Err(Error::BadMagic {
            found: magic,
            context: ctx(),
        });
    }
    let version = r
        .read_u32::<LittleEndian>()
        .map_err(|_| Error::Truncated(ctx()))?;
    if version != CHECKPOINT_VERSION {
        return Err(Error::InvalidArgument(format!(
            "unsupported checkpoint version {version}"
        )));
    }
    let n_layers = r
        .read_u32::<LittleEndian>()
        .map_err(|_| Error::Truncated(ctx()))? as usize;
    let read_nystrom = |r: &mut BufReader<std::fs::File>| -> Result<NystromLayer> {
        let adaptive = r.read_u8().map_err(|_| Error::Truncated(ctx()))? != 0;
        let sidecar = read_string(r, &ctx)?;
        let landmarks = load_landmarks(&dir.join(&sidecar))?;
        let w = read_matrix(r, &ctx)?;
        Ok(NystromLayer {
            landmarks,
            w,
            adaptive,
        })
    };
    let mut layers = Vec::with_capacity(n_layers);
    for _ in 0..n_layers {
        let tag = r.read_u8().map_err(|_| Error::Truncated(ctx()))?;
        let layer = match tag {
            TAG_NYSTROM => Layer::Nystrom(read_nystrom(&mut r)?),
            TAG_MULTI => {
                let n_sub = r
                    .read_u32::<LittleEndian>()
                    .map_err(|_| Error::Truncated(ctx()))? as usize;
                let has_slices = r.read_u8().map_err(|_| Error::Truncated(ctx()))? != 0;
                let slices = if has_slices {
                    let mut out = Vec::with_capacity(n_sub);
                    for _ in 0..n_sub {
                        let lo = r
                            .read_u32::<LittleEndian>()
                            .map_err(|_| Error::Truncated(ctx()))?
                            as usize;
                        let hi = r
                            .read_u32::<LittleEndian>()
                            .map_err(|_| Error::Truncated(ctx()))?
                            as usize;
                        out.push(lo..hi);
                    }
                    Some(out)
                } else {
                    None
                };
                let mut subs = Vec::with_capacity(n_sub);
                for _ in 0..n_sub {
                    subs.push(read_nystrom(&mut r)?);
                }
                Layer::MultiKernel(MultiKernelLayer::new(subs, slices)?)
            }
            TAG_DENSE => {
                let activation = match r.read_u8().map_err(|_| Error::Truncated(ctx()))? {
                    0 => Activation::None,
                    1 => Activation::Relu,
                    other => {
                        return Err(Error::InvalidArgument(format!(
                            "unknown activation tag {other}"
                        )))
                    }
                };
                let weight = read_matrix(&mut r, &ctx)?;
                let mut bias = Vector::zeros(weight.cols());
                for v in bias.data_mut() {
                    *v = r
                        .read_f64::<LittleEndian>()
                        .map_err(|_| Error::Truncated(ctx()))?;
                }
                Layer::Dense(DenseLayer {
                    weight,
                    bias,
                    activation,
                })
            }
            TAG_FRIED => {
                let adaptive = r.read_u8().map_err(|_| Error::Truncated(ctx()))? != 0;
                let n_blocks = r
                    .read_u32::<LittleEndian>()
                    .map_err(|_| Error::Truncated(ctx()))? as usize;
                let mut blocks = Vec::with_capacity(n_blocks);
                for _ in 0..n_blocks {
                    let d_pad = r
                        .read_u32::<LittleEndian>()
                        .map_err(|_| Error::Truncated(ctx()))?
                        as usize;
                    let sigma = r
                        .read_f64::<LittleEndian>()
                        .map_err(|_| Error::Truncated(ctx()))?;
                    let mut diags = Vec::with_capacity(3);
                    for _ in 0..3 {
                        let mut v = Vector::zeros(d_pad);
                        for x in v.data_mut() {
                            *x = r
                                .read_f64::<LittleEndian>()
                                .map_err(|_| Error::Truncated(ctx()))?;
                        }
                        diags.push(v);
                    }
                    let b_diag = diags.pop().unwrap();
                    let g_diag = diags.pop().unwrap();
                    let s_diag = diags.pop().unwrap();
                    let mut perm = Vec::with_capacity(d_pad);
                    for _ in 0..d_pad {
                        perm.push(
                            r.read_u64::<LittleEndian>()
                                .map_err(|_| Error::Truncated(ctx()))?
                                as usize,
                        );
                    }
                    blocks.push(FastfoodBlock {
                        d_pad,
                        s_diag,
                        g_diag,
                        b_diag,
                        perm,
                        sigma,
                    });
                }
                Layer::Fried(FriedLayer { blocks, adaptive })
            }
            other => {
                return Err(Error::InvalidArgument(format!(
                    "unknown layer tag {other}"
                )))
            }
        };
        layers.push(layer);
    }
    LayerStack::new(layers)
}

fn write_string(w: &mut impl Write, s: &str) -> Result<()> {
    w.write_u32::<LittleEndian>(s.len() as u32)?;
    w.write_all(s.as_bytes())?;
    Ok(())
}

fn read_string(r: &mut impl Read, ctx: &impl Fn() -> String) -> Result<String> {
    let len = r
        .read_u32::<LittleEndian>()
        .map_err(|_| Error::Truncated(ctx()))? as usize;
    let mut buf = vec![0u8; len];
    r.read_exact(&mut buf).map_err(|_| Error::Truncated(ctx()))?;
    String::from_utf8(buf).map_err(|_| Error::InvalidArgument("non-UTF8 string".into()))
}

fn write_matrix(w: &mut impl Write, m: &Matrix) -> Result<()> {
    w.write_u32::<LittleEndian>(m.rows() as u32)?;
    w.write_u32::<LittleEndian>(m.cols() as u32)?;
    for &v in m.data() {
        w.write_f64::<LittleEndian>(v)?;
    }
    Ok(())
}

fn read_matrix(r: &mut impl Read, ctx: &impl Fn() -> String) -> Result<Matrix> {
    let rows = r
        .read_u32::<LittleEndian>()
        .map_err(|_| Error::Truncated(ctx()))? as usize;
    let cols = r
        .read_u32::<LittleEndian>()
        .map_err(|_| Error::Truncated(ctx()))? as usize;
    let mut data = Vec::with_capacity(rows * cols);
    for _ in 0..rows * cols {
        data.push(
            r.read_f64::<LittleEndian>()
                .map_err(|_| Error::Truncated(ctx()))?,
        );
    }
    Matrix::from_vec(rows, cols, data)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::features::{make_fastfood, LandmarkSet};
    use crate::kernels::KernelSpec;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn round_trip_preserves_forward_bits() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let pts = Matrix::from_fn(5, 4, |_, _| rng.random_range(0.1..2.0));
        let ls = LandmarkSet::from_points(pts, KernelSpec::rbf(0.4), (0..5).collect(), 1).unwrap();
        let sub_a = NystromLayer::new(
            LandmarkSet::from_points(
                Matrix::from_fn(3, 2, |_, _| rng.random_range(0.1..2.0)),
                KernelSpec::linear(),
                vec![0, 1, 2],
                2,
            )
            .unwrap(),
            true,
        );
        let sub_b = NystromLayer::new(
            LandmarkSet::from_points(
                Matrix::from_fn(3, 2, |_, _| rng.random_range(0.1..2.0)),
                KernelSpec::rbf(1.1),
                vec![3, 4, 5],
                3,
            )
            .unwrap(),
            true,
        );
        let stacks = vec![
            LayerStack::new(vec![
                Layer::Nystrom(NystromLayer::new(ls, true)),
                Layer::Dense(DenseLayer::new(5, 3, Activation::None, 7)),
            ])
            .unwrap(),
            LayerStack::new(vec![
                Layer::MultiKernel(
                    MultiKernelLayer::new(vec![sub_a, sub_b], Some(vec![0..2, 2..4])).unwrap(),
                ),
                Layer::Dense(DenseLayer::new(6, 2, Activation::None, 8)),
            ])
            .unwrap(),
            LayerStack::new(vec![
                Layer::Fried(FriedLayer::new(vec![make_fastfood(4, 0.9, 5).unwrap()], true).unwrap()),
                Layer::Dense(DenseLayer::new(8, 2, Activation::None, 9)),
            ])
            .unwrap(),
        ];
        for (i, stack) in stacks.into_iter().enumerate() {
            let dir = tempfile::tempdir().unwrap();
            let path = dir.path().join(format!("model{i}.nyck"));
            save_checkpoint(&stack, &path).unwrap();
            let back = load_checkpoint(&path).unwrap();
            let x = Matrix::from_fn(6, 4, |_, _| rng.random_range(0.1..2.0));
            let (a, _) = stack.forward(&x).unwrap();
            let (b, _) = back.forward(&x).unwrap();
            assert_eq!(a, b, "stack {i} round trip changed outputs");
        }
    }

    #[test]
    fn bad_magic_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bogus.nyck");
        std::fs::write(&path, [9u8; 16]).unwrap();
        assert!(matches!(
            load_checkpoint(&path),
            Err(Error::BadMagic { .. })
        ));
    }
}
