//! Shuffled batching between dataset stores and tensors.

use candle_core::{DType, Device, Tensor};
use hdjscc_core::data::{DatasetStore, ImageTensor, Split};
use hdjscc_core::rng::{purpose, stream};
use rand::seq::SliceRandom;

use crate::Result;

/// Epoch ordering derived from `(seed, epoch)`, capped to the configured
/// subset size (0 meaning the whole split).
pub fn epoch_indices(n: usize, cap: usize, seed: u64, epoch: usize) -> Vec<usize> {
    let take = if cap == 0 { n } else { cap.min(n) };
    let mut order: Vec<usize> = (0..n).collect();
    let mut rng = stream(seed, purpose::DATA_SHUFFLE, &[epoch as u64]);
    order.shuffle(&mut rng);
    order.truncate(take);
    order
}

pub fn batch_tensor(
    store: &DatasetStore,
    split: Split,
    indices: &[usize],
    dtype: DType,
    device: &Device,
) -> Result<Tensor> {
    let (c, h, w) = store.image_shape();
    let mut data = Vec::with_capacity(indices.len() * c * h * w);
    for &i in indices {
        data.extend_from_slice(store.get(split, i)?.data());
    }
    Ok(Tensor::from_vec(data, (indices.len(), c, h, w), device)?.to_dtype(dtype)?)
}

pub fn image_to_tensor(img: &ImageTensor, dtype: DType, device: &Device) -> Result<Tensor> {
    let (c, h, w) = img.shape();
    Ok(Tensor::from_vec(img.data().to_vec(), (1, c, h, w), device)?.to_dtype(dtype)?)
}

pub fn tensor_to_images(t: &Tensor) -> Result<Vec<ImageTensor>> {
    let (b, c, h, w) = t.dims4()?;
    let flat = t
        .to_dtype(DType::F32)?
        .flatten_all()?
        .to_vec1::<f32>()?;
    let px = c * h * w;
    (0..b)
        .map(|i| {
            ImageTensor::new(c, h, w, flat[i * px..(i + 1) * px].to_vec()).map_err(Into::into)
        })
        .collect()
}
