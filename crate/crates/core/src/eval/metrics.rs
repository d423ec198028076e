use crate::error::{Error, Result};
use crate::volume::{check_same, ComplexVolume, Dvf, RealVolume};

/// Mean and population standard deviation of `image` over a 0/1 mask.
pub fn masked_stats(image: &RealVolume, mask: &RealVolume) -> Result<(f64, f64)> {
    check_same(image.dims, mask.dims)?;
    let vals: Vec<f64> = image
        .data
        .iter()
        .zip(&mask.data)
        .filter(|(_, m)| **m != 0.0)
        .map(|(v, _)| *v)
        .collect();
    if vals.is_empty() {
        return Err(Error::InvalidArgument("empty mask".into()));
    }
    let n = vals.len() as f64;
    let mean = vals.iter().sum::<f64>() / n;
    let var = vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    Ok((mean, var.sqrt()))
}

/// `20 log10(μ_roi / σ_noise)` in dB.
pub fn snr(image: &RealVolume, roi: &RealVolume, noise: &RealVolume) -> Result<f64> {
    let (mu, _) = masked_stats(image, roi)?;
    let (_, sigma) = masked_stats(image, noise)?;
    snr_from_stats(mu, sigma)
}

pub fn snr_from_stats(mu_roi: f64, sigma_noise: f64) -> Result<f64> {
    if sigma_noise <= 0.0 {
        return Err(Error::DegenerateNoise);
    }
    Ok(20.0 * (mu_roi / sigma_noise).log10())
}

/// `20 log10(|μ_roi − μ_noise| / σ_noise)` in dB. Equal means give
/// `-inf`, which the report flags rather than treats as an error.
pub fn cnr(image: &RealVolume, roi: &RealVolume, noise: &RealVolume) -> Result<f64> {
    let (mu, _) = masked_stats(image, roi)?;
    let (mu_n, sigma) = masked_stats(image, noise)?;
    cnr_from_stats(mu, mu_n, sigma)
}

pub fn cnr_from_stats(mu_roi: f64, mu_noise: f64, sigma_noise: f64) -> Result<f64> {
    if sigma_noise <= 0.0 {
        return Err(Error::DegenerateNoise);
    }
    let d = (mu_roi - mu_noise).abs();
    if d == 0.0 {
        return Ok(f64::NEG_INFINITY);
    }
    Ok(20.0 * (d / sigma_noise).log10())
}

/// `‖|recon| − |truth|‖ / ‖|truth|‖`.
pub fn nrmse(recon: &ComplexVolume, truth: &ComplexVolume) -> Result<f64> {
    check_same(recon.dims, truth.dims)?;
    let (mut num, mut den) = (0.0, 0.0);
    for (r, t) in recon.data.iter().zip(&truth.data) {
        num += (r.norm() - t.norm()).powi(2);
        den += t.norm_sqr();
    }
    if den == 0.0 {
        return Err(Error::InvalidArgument("ground truth has zero norm".into()));
    }
    Ok((num / den).sqrt())
}

/// NRMSE restricted to a 0/1 mask.
pub fn masked_nrmse(recon: &ComplexVolume, truth: &ComplexVolume, mask: &RealVolume) -> Result<f64> {
    check_same(recon.dims, truth.dims)?;
    check_same(recon.dims, mask.dims)?;
    let (mut num, mut den) = (0.0, 0.0);
    for ((r, t), m) in recon.data.iter().zip(&truth.data).zip(&mask.data) {
        if *m != 0.0 {
            num += (r.norm() - t.norm()).powi(2);
            den += t.norm_sqr();
        }
    }
    if den == 0.0 {
        return Err(Error::InvalidArgument("ground truth has zero norm inside the mask".into()));
    }
    Ok((num / den).sqrt())
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EndpointError {
    pub mean: f64,
    pub max: f64,
    pub rms: f64,
}

/// Per-voxel Euclidean distance between two displacement fields over a mask.
pub fn dvf_endpoint_error(estimate: &Dvf, truth: &Dvf, mask: &RealVolume) -> Result<EndpointError> {
    check_same(estimate.dims(), truth.dims())?;
    check_same(estimate.dims(), mask.dims)?;
    let (mut sum, mut sq, mut max, mut n) = (0.0, 0.0, 0.0f64, 0usize);
    for (i, m) in mask.data.iter().enumerate() {
        if *m == 0.0 {
            continue;
        }
        let (a, b) = (estimate.at(i), truth.at(i));
        let d2: f64 = (0..3).map(|c| (a[c] - b[c]).powi(2)).sum();
        sum += d2.sqrt();
        sq += d2;
        max = max.max(d2.sqrt());
        n += 1;
    }
    if n == 0 {
        return Err(Error::InvalidArgument("empty mask".into()));
    }
    Ok(EndpointError {
        mean: sum / n as f64,
        max,
        rms: (sq / n as f64).sqrt(),
    })
}

/// Sample Pearson correlation. `None` when either series is constant.
pub fn pearson(a: &[f64], b: &[f64]) -> Result<Option<f64>> {
    if a.len() != b.len() || a.len() < 2 {
        return Err(Error::InvalidArgument(format!(
            "pearson needs two equal series of length >= 2, got {} and {}",
            a.len(),
            b.len()
        )));
    }
    let n = a.len() as f64;
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        sab += (x - ma) * (y - mb);
        saa += (x - ma).powi(2);
        sbb += (y - mb).powi(2);
    }
    if saa == 0.0 || sbb == 0.0 {
        return Ok(None);
    }
    Ok(Some(sab / (saa * sbb).sqrt()))
}
