//! Scores a few hand-made predictions and prints the report format used by `eval`.

use gacunet::dataio::synthetic::flood_set;
use gacunet::dataio::Raster;
use gacunet::metrics::{dice_score, evaluate, iou, PRED_THRESHOLD};

fn main() -> gacunet::Result<()> {
    let pred = [true, true, false, false, true, false];
    let truth = [true, false, false, true, true, false];
    println!(
        "iou {:.4}, dice {:.4}",
        iou(&pred, &truth)?,
        dice_score(&pred, &truth)?
    );

    let pairs = flood_set(5, 16, 2);
    // A predictor that shifts the true mask one pixel to the right.
    let shifted = |image: &Raster| -> gacunet::Result<Raster> {
        let pair = pairs
            .iter()
            .find(|p| p.image == *image)
            .expect("image from the set");
        let (h, w) = (pair.height(), pair.width());
        let mut out = Raster::filled(h, w, 1, 0.0);
        for y in 0..h {
            for x in 1..w {
                out.set(y, x, 0, pair.mask.get(y, x - 1, 0));
            }
        }
        Ok(out)
    };
    let report = evaluate(&shifted, &pairs, PRED_THRESHOLD)?;
    print!("{}", report.to_text());
    Ok(())
}
