//! Segmentation kernels. Every function is pure and returns a new mask.

use std::collections::{BinaryHeap, VecDeque};

use super::image::{ImageGrid, LabelMask};
use super::ToyError;

/// Components larger than this many pixels are candidates for splitting.
pub const SPLIT_AREA: usize = 120;
/// Minimum distance-to-background of a splitting seed.
pub const SEED_DISTANCE: u32 = 2;
/// Extra darkness a pixel needs to be grown into by reconstruction.
pub const RECON_MARGIN: u8 = 10;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Connectivity {
    Four,
    Eight,
}

impl Connectivity {
    pub fn parse(text: &str) -> Option<Self> {
        match text {
            "4-conn" | "4" => Some(Connectivity::Four),
            "8-conn" | "8" => Some(Connectivity::Eight),
            _ => None,
        }
    }

    fn offsets(self) -> &'static [(i64, i64)] {
        const FOUR: [(i64, i64); 4] = [(0, -1), (-1, 0), (1, 0), (0, 1)];
        const EIGHT: [(i64, i64); 8] = [
            (-1, -1),
            (0, -1),
            (1, -1),
            (-1, 0),
            (1, 0),
            (-1, 1),
            (0, 1),
            (1, 1),
        ];
        match self {
            Connectivity::Four => &FOUR,
            Connectivity::Eight => &EIGHT,
        }
    }
}

fn neighbors(i: usize, w: usize, h: usize, conn: Connectivity) -> impl Iterator<Item = usize> {
    let (x, y) = ((i % w) as i64, (i / w) as i64);
    conn.offsets().iter().filter_map(move |&(dx, dy)| {
        let (nx, ny) = (x + dx, y + dy);
        (nx >= 0 && ny >= 0 && nx < w as i64 && ny < h as i64)
            .then(|| ny as usize * w + nx as usize)
    })
}

/// Labels the connected components of `fg` 1..=n in scan order of their
/// first pixel.
pub fn label_components(fg: &[bool], w: usize, h: usize, conn: Connectivity) -> (Vec<u32>, u32) {
    let mut labels = vec![0u32; fg.len()];
    let mut next = 0;
    let mut queue = VecDeque::new();
    for start in 0..fg.len() {
        if !fg[start] || labels[start] != 0 {
            continue;
        }
        next += 1;
        labels[start] = next;
        queue.push_back(start);
        while let Some(p) = queue.pop_front() {
            for n in neighbors(p, w, h, conn) {
                if fg[n] && labels[n] == 0 {
                    labels[n] = next;
                    queue.push_back(n);
                }
            }
        }
    }
    (labels, next)
}

fn foreground(mask: &LabelMask) -> Vec<bool> {
    mask.labels().iter().map(|&l| l != 0).collect()
}

fn check_shape(img: &ImageGrid, mask: &LabelMask) -> Result<(), ToyError> {
    if img.width() != mask.width() || img.height() != mask.height() {
        return Err(ToyError::Shape);
    }
    Ok(())
}

/// Foreground is every pixel that is not brighter than all three thresholds.
pub fn background_detect(img: &ImageGrid, b: f64, g: f64, r: f64) -> LabelMask {
    LabelMask::from_fn(img.width(), img.height(), |i| {
        let [pr, pg, pb] = img.rgb(i);
        !(pb as f64 > b && pg as f64 > g && pr as f64 > r)
    })
}

/// Removes red-blood-cell pixels: red/blue above `t1` and red/green above
/// `t2` (denominators floored at 1).
pub fn rbc_discard(
    img: &ImageGrid,
    mask: &LabelMask,
    t1: f64,
    t2: f64,
) -> Result<LabelMask, ToyError> {
    check_shape(img, mask)?;
    let mut out = mask.clone();
    for (i, l) in out.labels_mut().iter_mut().enumerate() {
        let [r, g, b] = img.rgb(i);
        let (r, g, b) = (r as f64, (g as f64).max(1.0), (b as f64).max(1.0));
        if r / b > t1 && r / g > t2 {
            *l = 0;
        }
    }
    Ok(out)
}

/// Mean gray level of the pixels outside `mask`, or 255 when there are none.
pub fn background_level(img: &ImageGrid, mask: &LabelMask) -> f64 {
    let (sum, n) = (0..mask.labels().len())
        .filter(|&i| !mask.is_fg(i))
        .fold((0u64, 0u64), |(s, n), i| (s + img.gray(i) as u64, n + 1));
    if n == 0 {
        255.0
    } else {
        sum as f64 / n as f64
    }
}

/// Hysteresis threshold on contrast against the background level: pixels
/// of `mask` with contrast ≥ `g1` seed objects that grow (8-connected) over
/// mask pixels with contrast ≥ `g2`. Output components are labeled.
pub fn candidate_nuclei(
    img: &ImageGrid,
    mask: &LabelMask,
    g1: f64,
    g2: f64,
) -> Result<LabelMask, ToyError> {
    check_shape(img, mask)?;
    let (w, h) = (mask.width(), mask.height());
    let bg = background_level(img, mask);
    let contrast = |i: usize| bg - img.gray(i) as f64;
    let high: Vec<bool> = (0..w * h)
        .map(|i| mask.is_fg(i) && contrast(i) >= g1)
        .collect();
    let low: Vec<bool> = (0..w * h)
        .map(|i| high[i] || (mask.is_fg(i) && contrast(i) >= g2))
        .collect();
    let mut keep = high.clone();
    let mut queue: VecDeque<usize> = (0..w * h).filter(|&i| high[i]).collect();
    while let Some(p) = queue.pop_front() {
        for n in neighbors(p, w, h, Connectivity::Eight) {
            if low[n] && !keep[n] {
                keep[n] = true;
                queue.push_back(n);
            }
        }
    }
    let (labels, _) = label_components(&keep, w, h, Connectivity::Eight);
    LabelMask::from_labels(w, h, labels)
}

/// Keeps labels whose pixel area lies in `[min, max]` and relabels them
/// densely in scan order.
pub fn area_filter(mask: &LabelMask, min: f64, max: f64) -> LabelMask {
    let top = mask.labels().iter().copied().max().unwrap_or(0) as usize;
    let mut area = vec![0usize; top + 1];
    for &l in mask.labels() {
        area[l as usize] += 1;
    }
    let mut remap = vec![0u32; top + 1];
    let mut next = 0;
    let mut out = mask.clone();
    for l in out.labels_mut() {
        let old = *l as usize;
        if old == 0 {
            continue;
        }
        let a = area[old] as f64;
        if a < min || a > max {
            *l = 0;
            continue;
        }
        if remap[old] == 0 {
            next += 1;
            remap[old] = next;
        }
        *l = remap[old];
    }
    out
}

/// Fills background regions not reachable from the image border under
/// `conn`. Output is binary.
pub fn fill_holes(mask: &LabelMask, conn: Connectivity) -> LabelMask {
    let (w, h) = (mask.width(), mask.height());
    let mut outside = vec![false; w * h];
    let mut queue = VecDeque::new();
    for (i, out) in outside.iter_mut().enumerate() {
        let (x, y) = (i % w, i / w);
        if (x == 0 || y == 0 || x == w - 1 || y == h - 1) && !mask.is_fg(i) {
            *out = true;
            queue.push_back(i);
        }
    }
    while let Some(p) = queue.pop_front() {
        for n in neighbors(p, w, h, conn) {
            if !mask.is_fg(n) && !outside[n] {
                outside[n] = true;
                queue.push_back(n);
            }
        }
    }
    LabelMask::from_fn(w, h, |i| !outside[i])
}

/// Grayscale reconstruction by dilation of `marker` under `reference`.
pub fn reconstruct(
    marker: &[u8],
    reference: &[u8],
    w: usize,
    h: usize,
    conn: Connectivity,
) -> Vec<u8> {
    let mut recon: Vec<u8> = marker
        .iter()
        .zip(reference)
        .map(|(&m, &r)| m.min(r))
        .collect();
    let mut heap: BinaryHeap<(u8, std::cmp::Reverse<usize>)> = recon
        .iter()
        .enumerate()
        .filter(|(_, &v)| v > 0)
        .map(|(i, &v)| (v, std::cmp::Reverse(i)))
        .collect();
    while let Some((v, std::cmp::Reverse(p))) = heap.pop() {
        if v < recon[p] {
            continue;
        }
        for n in neighbors(p, w, h, conn) {
            let cand = v.min(reference[n]);
            if cand > recon[n] {
                recon[n] = cand;
                heap.push((cand, std::cmp::Reverse(n)));
            }
        }
    }
    recon
}

/// Grows `mask` by reconstruction of the inverted image seeded on the mask.
/// A pixel joins when its reconstructed darkness reaches the lightest mask
/// pixel's darkness plus [`RECON_MARGIN`]. Output is binary.
pub fn morph_recon(
    img: &ImageGrid,
    mask: &LabelMask,
    conn: Connectivity,
) -> Result<LabelMask, ToyError> {
    check_shape(img, mask)?;
    let (w, h) = (mask.width(), mask.height());
    let inv: Vec<u8> = (0..w * h).map(|i| 255 - img.gray(i)).collect();
    let marker: Vec<u8> = (0..w * h)
        .map(|i| if mask.is_fg(i) { inv[i] } else { 0 })
        .collect();
    let Some(floor) = (0..w * h).filter(|&i| mask.is_fg(i)).map(|i| inv[i]).min() else {
        return Ok(LabelMask::empty(w, h));
    };
    let level = floor.saturating_add(RECON_MARGIN);
    let recon = reconstruct(&marker, &inv, w, h, conn);
    Ok(LabelMask::from_fn(w, h, |i| {
        mask.is_fg(i) || recon[i] >= level
    }))
}

/// Drops 8-connected components smaller than `min_area`; output is labeled.
pub fn prewatershed_filter(mask: &LabelMask, min_area: f64) -> LabelMask {
    let (w, h) = (mask.width(), mask.height());
    let (labels, _) = label_components(&foreground(mask), w, h, Connectivity::Eight);
    let labeled = LabelMask::from_labels(w, h, labels).expect("same shape");
    area_filter(&labeled, min_area, f64::INFINITY)
}

/// Distance (in `conn` steps) from each foreground pixel to the nearest
/// background pixel or the image border.
pub fn distance_transform(fg: &[bool], w: usize, h: usize, conn: Connectivity) -> Vec<u32> {
    let mut dist = vec![u32::MAX; w * h];
    let mut queue = VecDeque::new();
    for i in 0..w * h {
        let (x, y) = (i % w, i / w);
        if !fg[i] {
            dist[i] = 0;
            queue.push_back(i);
        } else if x == 0 || y == 0 || x == w - 1 || y == h - 1 {
            dist[i] = 1;
            queue.push_back(i);
        }
    }
    while let Some(p) = queue.pop_front() {
        for n in neighbors(p, w, h, conn) {
            if dist[n] == u32::MAX {
                dist[n] = dist[p] + 1;
                queue.push_back(n);
            }
        }
    }
    dist
}

/// Labels components under `conn` and splits those larger than
/// [`SPLIT_AREA`] between their distance-transform peaks: plateaus with
/// distance ≥ [`SEED_DISTANCE`] and no higher neighbor. Pixels go to the
/// nearest seed by breadth-first growth inside the component.
pub fn watershed_split(mask: &LabelMask, conn: Connectivity) -> LabelMask {
    let (w, h) = (mask.width(), mask.height());
    let fg = foreground(mask);
    let (comp, count) = label_components(&fg, w, h, conn);
    let dist = distance_transform(&fg, w, h, conn);
    let mut area = vec![0usize; count as usize + 1];
    for &c in &comp {
        area[c as usize] += 1;
    }

    // plateau regions of equal distance inside each component
    let mut plateau = vec![0u32; w * h];
    let mut is_peak = vec![false];
    let mut plateau_comp = vec![0u32];
    let mut queue = VecDeque::new();
    for start in 0..w * h {
        if !fg[start] || plateau[start] != 0 || area[comp[start] as usize] <= SPLIT_AREA {
            continue;
        }
        let id = is_peak.len() as u32;
        let d = dist[start];
        let mut peak = d >= SEED_DISTANCE;
        plateau[start] = id;
        queue.push_back(start);
        while let Some(p) = queue.pop_front() {
            for n in neighbors(p, w, h, conn) {
                if comp[n] != comp[start] {
                    continue;
                }
                if dist[n] > d {
                    peak = false;
                } else if dist[n] == d && plateau[n] == 0 {
                    plateau[n] = id;
                    queue.push_back(n);
                }
            }
        }
        is_peak.push(peak);
        plateau_comp.push(comp[start]);
    }

    let mut peaks_in = vec![0usize; count as usize + 1];
    for (id, &c) in plateau_comp.iter().enumerate() {
        if is_peak[id] {
            peaks_in[c as usize] += 1;
        }
    }
    let mut out = vec![0u32; w * h];
    let mut next = 0u32;
    let mut comp_label = vec![0u32; count as usize + 1];
    let mut peak_label = vec![0u32; is_peak.len()];
    for i in 0..w * h {
        let c = comp[i] as usize;
        if c == 0 {
            continue;
        }
        if peaks_in[c] < 2 {
            if comp_label[c] == 0 {
                next += 1;
                comp_label[c] = next;
            }
            out[i] = comp_label[c];
        } else if is_peak[plateau[i] as usize] {
            let p = plateau[i] as usize;
            if peak_label[p] == 0 {
                next += 1;
                peak_label[p] = next;
            }
            out[i] = peak_label[p];
            queue.push_back(i);
        }
    }
    // seeds were queued in scan order; grow them together
    while let Some(p) = queue.pop_front() {
        for n in neighbors(p, w, h, conn) {
            if comp[n] == comp[p] && out[n] == 0 {
                out[n] = out[p];
                queue.push_back(n);
            }
        }
    }
    LabelMask::from_labels(w, h, out).expect("same shape")
}

/// Pixel Dice of the binarized masks; 1.0 when both are empty.
pub fn dice(a: &LabelMask, b: &LabelMask) -> Result<f64, ToyError> {
    if !a.same_shape(b) {
        return Err(ToyError::Shape);
    }
    let (mut inter, mut na, mut nb) = (0u64, 0u64, 0u64);
    for (&x, &y) in a.labels().iter().zip(b.labels()) {
        let (x, y) = (x != 0, y != 0);
        na += x as u64;
        nb += y as u64;
        inter += (x && y) as u64;
    }
    if na + nb == 0 {
        return Ok(1.0);
    }
    Ok(2.0 * inter as f64 / (na + nb) as f64)
}
