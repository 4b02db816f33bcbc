use crate::error::Result;
use crate::real::Real;
use crate::tensor::{Tape, Tensor, Var};

#[derive(Debug, Clone, Copy)]
pub struct CenterOfMassOutput {
    /// `C×2`: per-channel (row, col) centroid in `[0, 1]²`.
    pub centroids: Var,
    /// `(C+2)×H×W`: input with the channel-mean row and column centroids appended
    /// as two constant planes.
    pub augmented: Var,
}

/// Softmax-weighted spatial centroid of every channel of a `C×H×W` map.
pub fn center_of_mass<T: Real>(tape: &mut Tape<T>, x: Var) -> Result<CenterOfMassOutput> {
    let centroids = tape.center_of_mass(x)?;
    let s = tape.shape(x).to_vec();
    let (h, w) = (s[1], s[2]);
    let mean = tape.mean_axis(centroids, 0)?;
    let column = tape.reshape(mean, &[2, 1])?;
    let ones = tape.constant(Tensor::ones(vec![1, h * w]));
    let planes = tape.matmul(column, ones)?;
    let planes = tape.reshape(planes, &[2, h, w])?;
    let augmented = tape.concat(&[x, planes], 0)?;
    Ok(CenterOfMassOutput {
        centroids,
        augmented,
    })
}
