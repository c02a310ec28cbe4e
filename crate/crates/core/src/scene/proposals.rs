use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{BoundingBox, Scene};

/// Relative jitter applied to each coordinate of a degraded proposal.
pub const JITTER: f64 = 0.10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProposalMode {
    GroundTruth,
    Degraded,
}

impl ProposalMode {
    pub fn name(self) -> &'static str {
        match self {
            ProposalMode::GroundTruth => "ground_truth",
            ProposalMode::Degraded => "degraded",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProposalSet {
    pub scene_id: String,
    pub boxes: Vec<BoundingBox>,
    pub mode: ProposalMode,
}

fn jitter(b: &BoundingBox, width: f64, height: f64, rng: &mut ChaCha8Rng) -> BoundingBox {
    let (w, h) = (b.width(), b.height());
    let mut d = |side: f64| rng.gen_range(-JITTER..=JITTER) * side;
    let x_min = (b.x_min + d(w)).clamp(0.0, width);
    let y_min = (b.y_min + d(h)).clamp(0.0, height);
    let x_max = (b.x_max + d(w)).clamp(0.0, width);
    let y_max = (b.y_max + d(h)).clamp(0.0, height);
    // Each side moves by at most 20% of its length, so the box stays proper.
    BoundingBox {
        x_min,
        y_min,
        x_max,
        y_max,
    }
}

/// Region proposals for a scene. Ground-truth mode returns the object boxes;
/// degraded mode jitters every object box and adds `floor(n / 3)` spurious
/// boxes at random positions.
pub fn make_proposals(scene: &Scene, mode: ProposalMode, seed: u64) -> ProposalSet {
    let boxes = match mode {
        ProposalMode::GroundTruth => scene.objects.iter().map(|o| o.bbox).collect(),
        ProposalMode::Degraded => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let (w, h) = (scene.width as f64, scene.height as f64);
            let mut boxes: Vec<BoundingBox> = scene
                .objects
                .iter()
                .map(|o| jitter(&o.bbox, w, h, &mut rng))
                .collect();
            for _ in 0..scene.objects.len() / 3 {
                let bw = rng.gen_range(30.0..120.0f64).min(w);
                let bh = rng.gen_range(30.0..120.0f64).min(h);
                let x = rng.gen_range(0.0..=(w - bw));
                let y = rng.gen_range(0.0..=(h - bh));
                boxes.push(BoundingBox {
                    x_min: x,
                    y_min: y,
                    x_max: x + bw,
                    y_max: y + bh,
                });
            }
            boxes
        }
    };
    ProposalSet {
        scene_id: scene.id.clone(),
        boxes,
        mode,
    }
}
