use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::referring::{
    resolve, Description, GroundedExpression, ReferringForm, Relation, Selector,
};
use super::{BoundingBox, Category, Color, Scene, SceneObject, SizeClass};
use crate::actuation::ObjectExtent;
use crate::error::{Error, Result};

const PLACEMENT_ATTEMPTS: usize = 1000;
const LARGE_SCALE: f64 = 1.5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SceneConfig {
    pub min_objects: usize,
    pub max_objects: usize,
    pub width: u32,
    pub height: u32,
    pub categories: Vec<Category>,
    pub colors: Vec<Color>,
    pub sizes: Vec<SizeClass>,
    /// Target share of spatio-semantic expressions per scene.
    pub spatial_fraction: f64,
    /// Largest IoU allowed between two placed objects.
    pub max_overlap: f64,
    /// Probability of describing a uniquely identifiable object with more
    /// attributes than strictly needed.
    pub overspecify: f64,
}

impl Default for SceneConfig {
    fn default() -> Self {
        SceneConfig {
            min_objects: 5,
            max_objects: 12,
            width: 640,
            height: 480,
            categories: Category::ALL.to_vec(),
            colors: Color::ALL.to_vec(),
            sizes: SizeClass::ALL.to_vec(),
            spatial_fraction: 0.4,
            max_overlap: 0.2,
            overspecify: 0.3,
        }
    }
}

impl SceneConfig {
    pub fn with_count(mut self, min: usize, max: usize) -> Self {
        self.min_objects = min;
        self.max_objects = max;
        self
    }

    fn validate(&self) -> Result<()> {
        if self.min_objects < 1 || self.max_objects > 20 || self.min_objects > self.max_objects {
            return Err(Error::InvalidArgument(format!(
                "object count range {}..={} must lie within 1..=20",
                self.min_objects, self.max_objects
            )));
        }
        if self.width == 0 || self.height == 0 {
            return Err(Error::InvalidArgument("canvas must be non-empty".into()));
        }
        if self.categories.is_empty() || self.colors.is_empty() || self.sizes.is_empty() {
            return Err(Error::InvalidArgument("attribute pools must be non-empty".into()));
        }
        if !(0.0..1.0).contains(&self.spatial_fraction) {
            return Err(Error::InvalidArgument("spatial_fraction must be in [0, 1)".into()));
        }
        Ok(())
    }
}

/// Pixel footprint ranges (width, height) of a small object.
fn footprint(category: Category) -> ((f64, f64), (f64, f64)) {
    match category {
        Category::Cup => ((40.0, 56.0), (40.0, 56.0)),
        Category::Bottle => ((26.0, 40.0), (80.0, 110.0)),
        Category::Glass => ((30.0, 44.0), (50.0, 70.0)),
        Category::Can => ((30.0, 40.0), (46.0, 60.0)),
        Category::Book => ((70.0, 100.0), (22.0, 34.0)),
        Category::Box => ((60.0, 88.0), (50.0, 76.0)),
    }
}

/// Metric (width, height, depth) of a small object.
fn metric_extent(category: Category) -> [f64; 3] {
    match category {
        Category::Cup => [0.08, 0.09, 0.08],
        Category::Bottle => [0.07, 0.22, 0.07],
        Category::Glass => [0.07, 0.12, 0.07],
        Category::Can => [0.066, 0.12, 0.066],
        Category::Book => [0.15, 0.03, 0.22],
        Category::Box => [0.12, 0.10, 0.12],
    }
}

type Attributes = (Category, Color, SizeClass);

fn draw_attributes(config: &SceneConfig, rng: &mut ChaCha8Rng) -> Attributes {
    (
        *config.categories.choose(rng).unwrap(),
        *config.colors.choose(rng).unwrap(),
        *config.sizes.choose(rng).unwrap(),
    )
}

fn assign_attributes(config: &SceneConfig, count: usize, rng: &mut ChaCha8Rng) -> Vec<Attributes> {
    let mut attrs: Vec<Attributes> = (0..count).map(|_| draw_attributes(config, rng)).collect();

    if count >= 4 {
        let groups = 1 + usize::from(count >= 8);
        let mut order: Vec<usize> = (0..count).collect();
        order.shuffle(rng);
        let mut free = order.into_iter();
        for _ in 0..groups {
            let size = if count >= 6 && rng.gen_bool(0.35) { 3 } else { 2 };
            let members: Vec<usize> = free.by_ref().take(size).collect();
            if members.len() < 2 {
                break;
            }
            for &m in &members[1..] {
                attrs[m] = attrs[members[0]];
            }
        }
    }

    // Guarantee one attribute-unique object so the scene has a plain description.
    let is_unique = |attrs: &[Attributes], i: usize| {
        attrs.iter().enumerate().all(|(j, a)| j == i || *a != attrs[i])
    };
    if !(0..count).any(|i| is_unique(&attrs, i)) {
        let last = count - 1;
        for _ in 0..64 {
            attrs[last] = draw_attributes(config, rng);
            if is_unique(&attrs, last) {
                break;
            }
        }
    }
    attrs
}

fn place(
    config: &SceneConfig,
    attrs: Attributes,
    placed: &[BoundingBox],
    index: usize,
    count: usize,
    rng: &mut ChaCha8Rng,
) -> Result<BoundingBox> {
    let (category, _, size) = attrs;
    let scale = if size == SizeClass::Large { LARGE_SCALE } else { 1.0 };
    let ((w0, w1), (h0, h1)) = footprint(category);
    let (cw, ch) = (config.width as f64, config.height as f64);
    let w = (rng.gen_range(w0..w1) * scale).round().min(cw);
    let h = (rng.gen_range(h0..h1) * scale).round().min(ch);
    for _ in 0..PLACEMENT_ATTEMPTS {
        let x = rng.gen_range(0.0..=(cw - w)).round();
        let y = rng.gen_range(0.0..=(ch - h)).round();
        let candidate = BoundingBox::new(x, y, x + w, y + h)?;
        if placed.iter().all(|p| p.iou(&candidate) <= config.max_overlap) {
            return Ok(candidate);
        }
    }
    Err(Error::Placement {
        object: index,
        requested: count,
        width: config.width,
        height: config.height,
    })
}

/// Generates one scene; a pure function of `(config, seed)`.
pub fn generate_scene(config: &SceneConfig, seed: u64) -> Result<Scene> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let count = rng.gen_range(config.min_objects..=config.max_objects);
    let attrs = assign_attributes(config, count, &mut rng);

    let mut boxes = Vec::with_capacity(count);
    let mut objects = Vec::with_capacity(count);
    for (i, &a) in attrs.iter().enumerate() {
        let bbox = place(config, a, &boxes, i, count, &mut rng)?;
        boxes.push(bbox);
        let scale = if a.2 == SizeClass::Large { LARGE_SCALE } else { 1.0 };
        let e = metric_extent(a.0).map(|v| (v * scale * rng.gen_range(0.9..1.1) * 1000.0).round() / 1000.0);
        objects.push(SceneObject {
            id: format!("o{i}"),
            category: a.0,
            color: a.1,
            size_class: a.2,
            bbox,
            extent: ObjectExtent::new(e[0], e[1], e[2])?,
        });
    }
    Ok(Scene {
        id: format!("scene-{seed}"),
        width: config.width,
        height: config.height,
        objects,
    })
}

fn descriptions_of(obj: &SceneObject) -> [Description; 4] {
    let d = |size, color| Description {
        size,
        color,
        category: obj.category,
    };
    [
        d(None, None),
        d(None, Some(obj.color)),
        d(Some(obj.size_class), None),
        d(Some(obj.size_class), Some(obj.color)),
    ]
}

fn match_set(scene: &Scene, d: &Description) -> Vec<usize> {
    (0..scene.objects.len())
        .filter(|&i| d.matches(&scene.objects[i]))
        .collect()
}

/// Every attribute description of object `i` that singles it out.
fn unique_descriptions(scene: &Scene, i: usize) -> Vec<Description> {
    descriptions_of(&scene.objects[i])
        .into_iter()
        .filter(|d| match_set(scene, d) == [i])
        .collect()
}

/// Spatial forms over `description` that resolve to exactly object `t`,
/// split into (selector forms, relational forms).
fn spatial_forms(
    scene: &Scene,
    t: usize,
    description: Description,
    contexts: &[(usize, Description)],
) -> (Vec<ReferringForm>, Vec<ReferringForm>) {
    let selected = Selector::ALL
        .into_iter()
        .map(|selector| ReferringForm::Selected {
            selector,
            description,
        })
        .filter(|f| resolve(scene, f) == [t])
        .collect();
    let group = match_set(scene, &description);
    let mut related = Vec::new();
    for &(c, context) in contexts {
        if group.contains(&c) {
            continue;
        }
        for relation in Relation::ALL {
            let f = ReferringForm::Related {
                target: description,
                relation,
                context,
            };
            if resolve(scene, &f) == [t] {
                related.push(f);
            }
        }
    }
    (selected, related)
}

fn pick_spatial(
    selected: Vec<ReferringForm>,
    related: Vec<ReferringForm>,
    rng: &mut ChaCha8Rng,
) -> Option<ReferringForm> {
    let pool = match (selected.is_empty(), related.is_empty()) {
        (true, true) => return None,
        (false, true) => selected,
        (true, false) => related,
        (false, false) => {
            if rng.gen_bool(0.5) {
                selected
            } else {
                related
            }
        }
    };
    pool.choose(rng).copied()
}

/// Generates the referring expressions for a scene. Every expression is
/// checked against the enumeration oracle and singles out its target.
pub fn generate_expressions(
    scene: &Scene,
    config: &SceneConfig,
    seed: u64,
) -> Vec<GroundedExpression> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed_e4e5);
    let n = scene.objects.len();

    let unique: Vec<Vec<Description>> = (0..n).map(|i| unique_descriptions(scene, i)).collect();
    let contexts: Vec<(usize, Description)> = unique
        .iter()
        .enumerate()
        .filter_map(|(i, ds)| ds.first().map(|d| (i, *d)))
        .collect();

    let mut semantic = Vec::new();
    let mut ambiguous = Vec::new();
    let mut extra = Vec::new();
    for t in 0..n {
        let obj = &scene.objects[t];
        if let Some(first) = unique[t].first() {
            let d = if unique[t].len() > 1 && rng.gen_bool(config.overspecify) {
                *unique[t][1..].choose(&mut rng).unwrap()
            } else {
                *first
            };
            semantic.push((t, ReferringForm::Plain(d)));

            let category_only = descriptions_of(obj)[0];
            if match_set(scene, &category_only).len() >= 2 {
                let (s, r) = spatial_forms(scene, t, category_only, &contexts);
                if let Some(f) = pick_spatial(s, r, &mut rng) {
                    extra.push((t, f));
                }
            }
        } else {
            let full = descriptions_of(obj)[3];
            let group = match_set(scene, &full);
            let d = descriptions_of(obj)
                .into_iter()
                .find(|d| match_set(scene, d) == group)
                .unwrap_or(full);
            let (s, r) = spatial_forms(scene, t, d, &contexts);
            if let Some(f) = pick_spatial(s, r, &mut rng) {
                ambiguous.push((t, f));
            }
        }
    }

    let f = config.spatial_fraction;
    let mut spatial = ambiguous;
    if semantic.is_empty() {
        spatial.extend(extra);
    } else {
        let wanted = (f / (1.0 - f) * semantic.len() as f64).round() as usize;
        if spatial.len() > wanted {
            spatial.shuffle(&mut rng);
            spatial.truncate(wanted);
            spatial.sort_by_key(|(t, _)| *t);
        } else {
            extra.shuffle(&mut rng);
            let missing = wanted - spatial.len();
            spatial.extend(extra.into_iter().take(missing));
            spatial.sort_by_key(|(t, _)| *t);
        }
    }

    semantic
        .into_iter()
        .chain(spatial)
        .map(|(t, form)| {
            let text = form.realize(&mut |words| words.choose(&mut rng).unwrap());
            debug_assert_eq!(super::referring::resolve_text(scene, &text), Some(vec![t]));
            GroundedExpression {
                text,
                target: scene.objects[t].id.clone(),
                kind: form.kind(),
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scene::referring::{resolve_text, ExpressionKind};

    #[test]
    fn single_object_scene() {
        let cfg = SceneConfig::default().with_count(1, 1);
        let scene = generate_scene(&cfg, 7).unwrap();
        assert_eq!(scene.objects.len(), 1);
        let exprs = generate_expressions(&scene, &cfg, 7);
        assert_eq!(exprs.len(), 1);
        assert_eq!(exprs[0].kind, ExpressionKind::SemanticOnly);
        assert_eq!(exprs[0].target, "o0");
    }

    #[test]
    fn deterministic() {
        let cfg = SceneConfig::default();
        let a = generate_scene(&cfg, 99).unwrap();
        let b = generate_scene(&cfg, 99).unwrap();
        assert_eq!(serde_json::to_string(&a).unwrap(), serde_json::to_string(&b).unwrap());
        assert_eq!(generate_expressions(&a, &cfg, 1), generate_expressions(&b, &cfg, 1));
    }

    #[test]
    fn rejects_bad_count_range() {
        let cfg = SceneConfig::default().with_count(0, 3);
        assert!(generate_scene(&cfg, 0).is_err());
        let cfg = SceneConfig::default().with_count(5, 21);
        assert!(generate_scene(&cfg, 0).is_err());
    }

    #[test]
    fn tiny_canvas_fails_placement() {
        let mut cfg = SceneConfig::default().with_count(20, 20);
        cfg.width = 120;
        cfg.height = 120;
        assert!(matches!(generate_scene(&cfg, 3), Err(Error::Placement { .. })));
    }

    #[test]
    fn plants_duplicates_and_limits_overlap() {
        let cfg = SceneConfig::default().with_count(4, 12);
        for seed in 0..50 {
            let scene = generate_scene(&cfg, seed).unwrap();
            scene.validate().unwrap();
            let objs = &scene.objects;
            let dup = (0..objs.len())
                .any(|i| (0..objs.len()).any(|j| i != j && objs[i].same_attributes(&objs[j])));
            assert!(dup, "seed {seed} has no duplicate pair");
            for i in 0..objs.len() {
                for j in i + 1..objs.len() {
                    assert!(objs[i].bbox.iou(&objs[j].bbox) <= 0.2);
                }
            }
        }
    }

    #[test]
    fn two_blue_bottles_get_left_and_right() {
        let scene = Scene {
            id: "s".into(),
            width: 640,
            height: 480,
            objects: vec![
                SceneObject {
                    id: "o0".into(),
                    category: Category::Bottle,
                    color: Color::Blue,
                    size_class: SizeClass::Small,
                    bbox: BoundingBox::new(400.0, 100.0, 430.0, 200.0).unwrap(),
                    extent: ObjectExtent::new(0.07, 0.22, 0.07).unwrap(),
                },
                SceneObject {
                    id: "o1".into(),
                    category: Category::Bottle,
                    color: Color::Blue,
                    size_class: SizeClass::Small,
                    bbox: BoundingBox::new(100.0, 100.0, 130.0, 200.0).unwrap(),
                    extent: ObjectExtent::new(0.07, 0.22, 0.07).unwrap(),
                },
            ],
        };
        let mut cfg = SceneConfig::default();
        cfg.spatial_fraction = 0.5;
        let exprs = generate_expressions(&scene, &cfg, 0);
        assert_eq!(exprs.len(), 2);
        let left = exprs.iter().find(|e| e.target == "o1").unwrap();
        assert_eq!(left.kind, ExpressionKind::SpatioSemantic);
        assert!(
            left.text.starts_with("the left ") && (left.text.ends_with(" bottle") || left.text.ends_with(" flask")),
            "{}",
            left.text
        );
    }

    #[test]
    fn every_expression_is_uniquely_satisfiable() {
        let cfg = SceneConfig::default();
        let mut kinds = [0usize; 2];
        for seed in 0..300 {
            let scene = generate_scene(&cfg, seed).unwrap();
            let exprs = generate_expressions(&scene, &cfg, seed);
            assert!(!exprs.is_empty());
            for e in &exprs {
                let target = scene.object_index(&e.target).unwrap();
                assert_eq!(resolve_text(&scene, &e.text), Some(vec![target]), "{}", e.text);
                kinds[(e.kind == ExpressionKind::SpatioSemantic) as usize] += 1;
            }
        }
        let frac = kinds[1] as f64 / (kinds[0] + kinds[1]) as f64;
        assert!((0.3..=0.45).contains(&frac), "spatial fraction {frac}");
    }
}
