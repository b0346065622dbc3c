//! Color-stripe permutation pattern: generation, window lookup, and the
//! first/second-order derivative code tables used for decoding.
//!
//! A pattern is a sequence of primary colors in which neighbouring stripes
//! always differ and every run of `k` consecutive stripes (a *window*) occurs
//! exactly once. For three colors there are `3 * 2^(k-1)` such windows; the
//! generator emits all of them in a single sequence of `3 * 2^(k-1) + k - 1`
//! stripes by walking an Eulerian circuit of the window graph.

use std::collections::HashMap;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::raster::{RadianceImage, Raster, Rgb8Image};

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum PatternError {
    #[error("window length must be at least {min}, got {k}")]
    WindowTooShort { k: usize, min: usize },
    #[error("need at least 2 colors, got {0}")]
    TooFewColors(usize),
    #[error("only the three primaries R, G, B are supported, got {0} colors")]
    UnsupportedColors(usize),
    #[error("window length {k} is too long for a {n}-color pattern")]
    WindowTooLong { k: usize, n: usize },
    #[error("traversal covered {achieved} of {required} windows")]
    IncompleteTraversal {
        achieved: usize,
        required: usize,
        partial: Vec<ColorLabel>,
    },
    #[error("expected a window of length {expected}, got {got}")]
    WindowLength { expected: usize, got: usize },
    #[error("stripe width must be at least 1 pixel")]
    StripeWidth,
    #[error("raster width {width} is smaller than one stripe ({stripe} px)")]
    RasterTooNarrow { width: usize, stripe: usize },
    #[error("invalid stripe character {0:?}")]
    BadChar(char),
    #[error("stripes {0} and {1} have the same color")]
    AdjacentRepeat(usize, usize),
    #[error("window starting at {second} repeats the window at {first}")]
    DuplicateWindow { first: usize, second: usize },
    #[error("pattern has {stripes} stripes, fewer than the window length {k}")]
    TooShort { stripes: usize, k: usize },
}

/// One of the three projected primaries.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum ColorLabel {
    R,
    G,
    B,
}

impl ColorLabel {
    pub const ALL: [ColorLabel; 3] = [ColorLabel::R, ColorLabel::G, ColorLabel::B];

    #[inline]
    pub fn channel(self) -> usize {
        self as usize
    }

    pub fn from_channel(c: usize) -> Option<Self> {
        Self::ALL.get(c).copied()
    }

    /// Unit-intensity primary.
    pub fn rgb(self) -> [f32; 3] {
        let mut v = [0.0; 3];
        v[self.channel()] = 1.0;
        v
    }

    pub fn as_char(self) -> char {
        match self {
            ColorLabel::R => 'R',
            ColorLabel::G => 'G',
            ColorLabel::B => 'B',
        }
    }

    pub fn from_char(c: char) -> Option<Self> {
        match c {
            'R' | 'r' => Some(ColorLabel::R),
            'G' | 'g' => Some(ColorLabel::G),
            'B' | 'b' => Some(ColorLabel::B),
            _ => None,
        }
    }
}

/// Signed color derivative at a stripe boundary.
///
/// `+XY` marks the boundary where channel X falls and channel Y rises along the
/// encoding direction (X→Y); `-XY` is the reverse transition Y→X.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum TransitionCode {
    PosRG,
    NegRG,
    PosGB,
    NegGB,
    PosBR,
    NegBR,
}

impl TransitionCode {
    pub const ALL: [TransitionCode; 6] = [
        TransitionCode::PosRG,
        TransitionCode::NegRG,
        TransitionCode::PosGB,
        TransitionCode::NegGB,
        TransitionCode::PosBR,
        TransitionCode::NegBR,
    ];

    /// Code of the boundary from `from` to `to`; `None` when the colors match.
    pub fn between(from: ColorLabel, to: ColorLabel) -> Option<Self> {
        use ColorLabel::*;
        use TransitionCode::*;
        Some(match (from, to) {
            (R, G) => PosRG,
            (G, R) => NegRG,
            (G, B) => PosGB,
            (B, G) => NegGB,
            (B, R) => PosBR,
            (R, B) => NegBR,
            _ => return None,
        })
    }

    /// Color on the near side of the boundary.
    pub fn exited(self) -> ColorLabel {
        use ColorLabel::*;
        use TransitionCode::*;
        match self {
            PosRG | NegBR => R,
            PosGB | NegRG => G,
            PosBR | NegGB => B,
        }
    }

    /// Color on the far side of the boundary: R = {+BR, -RG}, G = {+RG, -GB}, B = {+GB, -BR}.
    pub fn entered(self) -> ColorLabel {
        use ColorLabel::*;
        use TransitionCode::*;
        match self {
            PosBR | NegRG => R,
            PosRG | NegGB => G,
            PosGB | NegBR => B,
        }
    }

    /// Same boundary read in the opposite direction.
    pub fn reversed(self) -> Self {
        Self::between(self.entered(), self.exited()).expect("codes join distinct colors")
    }

    /// Per-channel derivative sign pattern, e.g. `+RG` → `(-1, +1, 0)`.
    pub fn signature(self) -> [f32; 3] {
        let mut s = [0.0; 3];
        s[self.exited().channel()] = -1.0;
        s[self.entered().channel()] = 1.0;
        s
    }

    pub fn name(self) -> &'static str {
        use TransitionCode::*;
        match self {
            PosRG => "+RG",
            NegRG => "-RG",
            PosGB => "+GB",
            NegGB => "-GB",
            PosBR => "+BR",
            NegBR => "-BR",
        }
    }

    fn ordinal(self) -> u8 {
        self as u8
    }
}

impl fmt::Display for TransitionCode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Transition of transitions at an interior stripe: the discrete second
/// difference `c[i-1] - 2 c[i] + c[i+1]` of the color sequence.
///
/// It always determines the middle color; it identifies the neighbour color
/// only when both neighbours agree (a "return" like R-G-R).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct SecondOrderCode([i8; 3]);

impl SecondOrderCode {
    /// Code of the stripe entered by `incoming` and left by `outgoing`.
    ///
    /// Returns `None` when the two boundaries do not share a stripe color.
    pub fn from_transitions(incoming: TransitionCode, outgoing: TransitionCode) -> Option<Self> {
        if incoming.entered() != outgoing.exited() {
            return None;
        }
        let a = incoming.signature();
        let b = outgoing.signature();
        Some(Self([
            (b[0] - a[0]) as i8,
            (b[1] - a[1]) as i8,
            (b[2] - a[2]) as i8,
        ]))
    }

    pub fn from_colors(prev: ColorLabel, mid: ColorLabel, next: ColorLabel) -> Option<Self> {
        Self::from_transitions(
            TransitionCode::between(prev, mid)?,
            TransitionCode::between(mid, next)?,
        )
    }

    pub fn signature(self) -> [i8; 3] {
        self.0
    }

    /// The stripe color: the channel with the `-2` entry.
    pub fn middle(self) -> ColorLabel {
        let c = self.0.iter().position(|&v| v == -2).expect("valid code has a -2 entry");
        ColorLabel::from_channel(c).unwrap()
    }

    fn key(self) -> u8 {
        ((self.0[0] + 2) * 25 + (self.0[1] + 2) * 5 + (self.0[2] + 2)) as u8
    }
}

/// Number of adjacent-distinct color strings of length `k`: `n (n-1)^(k-1)`.
pub fn count_subpatterns(k: usize, n_colors: usize) -> Result<usize, PatternError> {
    if k < 1 {
        return Err(PatternError::WindowTooShort { k, min: 1 });
    }
    if n_colors < 2 {
        return Err(PatternError::TooFewColors(n_colors));
    }
    let mut total = n_colors;
    for _ in 1..k {
        total = total
            .checked_mul(n_colors - 1)
            .ok_or(PatternError::WindowTooLong { k, n: n_colors })?;
    }
    Ok(total)
}

/// Base-3 key of a color window; `k` is capped so the key fits in 64 bits.
fn window_key(window: &[ColorLabel]) -> u64 {
    window
        .iter()
        .fold(0u64, |acc, c| acc * 3 + c.channel() as u64)
}

const MAX_WINDOW: usize = 40;

/// A validated color-stripe pattern with its window index.
#[derive(Debug, Clone)]
pub struct StripePattern {
    stripes: Vec<ColorLabel>,
    window_length: usize,
    lookup: HashMap<u64, usize>,
    stripe_width_px: usize,
}

impl PartialEq for StripePattern {
    fn eq(&self, other: &Self) -> bool {
        self.stripes == other.stripes
            && self.window_length == other.window_length
            && self.stripe_width_px == other.stripe_width_px
    }
}

/// Default stripe width in projector pixels.
pub const DEFAULT_STRIPE_WIDTH_PX: usize = 4;

impl StripePattern {
    /// Validates a stripe sequence and indexes its windows.
    pub fn new(
        stripes: Vec<ColorLabel>,
        window_length: usize,
        stripe_width_px: usize,
    ) -> Result<Self, PatternError> {
        if window_length < 2 {
            return Err(PatternError::WindowTooShort { k: window_length, min: 2 });
        }
        if window_length > MAX_WINDOW {
            return Err(PatternError::WindowTooLong { k: window_length, n: 3 });
        }
        if stripe_width_px == 0 {
            return Err(PatternError::StripeWidth);
        }
        if stripes.len() < window_length {
            return Err(PatternError::TooShort {
                stripes: stripes.len(),
                k: window_length,
            });
        }
        if let Some(i) = stripes.windows(2).position(|p| p[0] == p[1]) {
            return Err(PatternError::AdjacentRepeat(i, i + 1));
        }
        let mut lookup = HashMap::with_capacity(stripes.len());
        for (i, w) in stripes.windows(window_length).enumerate() {
            if let Some(&first) = lookup.get(&window_key(w)) {
                return Err(PatternError::DuplicateWindow { first, second: i });
            }
            lookup.insert(window_key(w), i);
        }
        Ok(Self {
            stripes,
            window_length,
            lookup,
            stripe_width_px,
        })
    }

    pub fn stripes(&self) -> &[ColorLabel] {
        &self.stripes
    }

    pub fn len(&self) -> usize {
        self.stripes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.stripes.is_empty()
    }

    pub fn window_length(&self) -> usize {
        self.window_length
    }

    pub fn stripe_width_px(&self) -> usize {
        self.stripe_width_px
    }

    pub fn with_stripe_width(mut self, px: usize) -> Result<Self, PatternError> {
        if px == 0 {
            return Err(PatternError::StripeWidth);
        }
        self.stripe_width_px = px;
        Ok(self)
    }

    /// Number of indexed windows, `len - k + 1`.
    pub fn num_windows(&self) -> usize {
        self.stripes.len() + 1 - self.window_length
    }

    pub fn window_at(&self, index: usize) -> &[ColorLabel] {
        &self.stripes[index..index + self.window_length]
    }

    /// Pattern width in projector pixels.
    pub fn width_px(&self) -> usize {
        self.stripes.len() * self.stripe_width_px
    }

    /// Global index of `window`, or `Ok(None)` when it does not occur.
    pub fn window_lookup(&self, window: &[ColorLabel]) -> Result<Option<usize>, PatternError> {
        if window.len() != self.window_length {
            return Err(PatternError::WindowLength {
                expected: self.window_length,
                got: window.len(),
            });
        }
        Ok(self.lookup.get(&window_key(window)).copied())
    }

    /// One character per stripe followed by a newline.
    pub fn to_text(&self) -> String {
        let mut s: String = self.stripes.iter().map(|c| c.as_char()).collect();
        s.push('\n');
        s
    }

    pub fn from_text(
        text: &str,
        window_length: usize,
        stripe_width_px: usize,
    ) -> Result<Self, PatternError> {
        let stripes = text
            .chars()
            .filter(|c| !c.is_whitespace())
            .map(|c| ColorLabel::from_char(c).ok_or(PatternError::BadChar(c)))
            .collect::<Result<Vec<_>, _>>()?;
        Self::new(stripes, window_length, stripe_width_px)
    }

    /// Transition codes between consecutive stripes (length `len - 1`).
    pub fn transitions(&self) -> Vec<TransitionCode> {
        self.stripes
            .windows(2)
            .map(|p| TransitionCode::between(p[0], p[1]).expect("adjacent stripes differ"))
            .collect()
    }
}

/// Generates the full-traversal pattern for window length `k` over the
/// three primaries.
///
/// Nodes of the window graph are adjacent-distinct strings of length `k-1`;
/// every window is an edge. The circuit starts at the lexicographically
/// smallest node and always takes the smallest unused outgoing edge.
pub fn generate_pattern(k: usize, n_colors: usize) -> Result<StripePattern, PatternError> {
    if k < 2 {
        return Err(PatternError::WindowTooShort { k, min: 2 });
    }
    if n_colors != 3 {
        return Err(PatternError::UnsupportedColors(n_colors));
    }
    if k > MAX_WINDOW {
        return Err(PatternError::WindowTooLong { k, n: n_colors });
    }
    let required = count_subpatterns(k, n_colors)?;
    let stripes = eulerian_sequence(k, &ColorLabel::ALL, |_| true);
    let achieved = stripes.len() + 1 - k;
    if achieved < required {
        return Err(PatternError::IncompleteTraversal {
            achieved,
            required,
            partial: stripes,
        });
    }
    StripePattern::new(stripes, k, DEFAULT_STRIPE_WIDTH_PX)
}

/// Hierholzer walk over the adjacent-distinct window graph restricted to
/// windows accepted by `allow`. Returns the stripe sequence of the longest
/// closed walk from the smallest node that has an allowed edge.
fn eulerian_sequence(
    k: usize,
    alphabet: &[ColorLabel],
    allow: impl Fn(&[ColorLabel]) -> bool,
) -> Vec<ColorLabel> {
    let mut nodes: Vec<Vec<ColorLabel>> = vec![Vec::new()];
    for _ in 0..k - 1 {
        let mut next = Vec::new();
        for n in &nodes {
            for &c in alphabet {
                if n.last() != Some(&c) {
                    let mut m = n.clone();
                    m.push(c);
                    next.push(m);
                }
            }
        }
        nodes = next;
    }
    nodes.sort();
    let id: HashMap<Vec<ColorLabel>, usize> =
        nodes.iter().enumerate().map(|(i, n)| (n.clone(), i)).collect();
    // Outgoing edges in ascending order of the appended color.
    let adj: Vec<Vec<(ColorLabel, usize)>> = nodes
        .iter()
        .map(|n| {
            alphabet
                .iter()
                .filter(|&&c| n.last() != Some(&c))
                .filter_map(|&c| {
                    let mut w = n.clone();
                    w.push(c);
                    if !allow(&w) {
                        return None;
                    }
                    Some((c, id[&w[1..]]))
                })
                .collect()
        })
        .collect();
    let Some(start) = adj.iter().position(|a| !a.is_empty()) else {
        return nodes.first().cloned().unwrap_or_default();
    };
    let mut used = vec![0usize; nodes.len()];
    let mut stack: Vec<(usize, Option<ColorLabel>)> = vec![(start, None)];
    let mut circuit: Vec<Option<ColorLabel>> = Vec::new();
    while let Some(&(v, _)) = stack.last() {
        if used[v] < adj[v].len() {
            let (c, to) = adj[v][used[v]];
            used[v] += 1;
            stack.push((to, Some(c)));
        } else {
            let (_, c) = stack.pop().unwrap();
            circuit.push(c);
        }
    }
    circuit.reverse();
    let mut seq = nodes[start].clone();
    seq.extend(circuit.into_iter().flatten());
    seq
}

/// Window index over derivative codes of one order.
#[derive(Debug, Clone)]
pub struct CodeTable {
    order: u8,
    window_length: usize,
    entries: HashMap<Vec<u8>, usize>,
}

impl CodeTable {
    pub fn order(&self) -> u8 {
        self.order
    }

    /// Number of codes per window, `k - order`.
    pub fn window_length(&self) -> usize {
        self.window_length
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn lookup_transitions(&self, codes: &[TransitionCode]) -> Option<usize> {
        if self.order != 1 || codes.len() != self.window_length {
            return None;
        }
        let key: Vec<u8> = codes.iter().map(|c| c.ordinal()).collect();
        self.entries.get(&key).copied()
    }

    pub fn lookup_second_order(&self, codes: &[SecondOrderCode]) -> Option<usize> {
        if self.order != 2 || codes.len() != self.window_length {
            return None;
        }
        let key: Vec<u8> = codes.iter().map(|c| c.key()).collect();
        self.entries.get(&key).copied()
    }
}

/// Derivative code table of the given order.
///
/// Order 1 maps the `k-1` transition codes of each color window to the
/// window's index; order 2 maps the `k-2` transition-of-transition codes.
/// Both orders keep every window distinct.
pub fn build_code_table(pattern: &StripePattern, order: u8) -> Result<CodeTable, PatternError> {
    let k = pattern.window_length();
    let min = order as usize + 1;
    if !(1..=2).contains(&order) || k < min {
        return Err(PatternError::WindowTooShort { k, min });
    }
    let mut entries = HashMap::with_capacity(pattern.num_windows());
    for i in 0..pattern.num_windows() {
        let w = pattern.window_at(i);
        let key: Vec<u8> = match order {
            1 => w
                .windows(2)
                .map(|p| TransitionCode::between(p[0], p[1]).unwrap().ordinal())
                .collect(),
            _ => w
                .windows(3)
                .map(|t| SecondOrderCode::from_colors(t[0], t[1], t[2]).unwrap().key())
                .collect(),
        };
        if let Some(first) = entries.insert(key, i) {
            return Err(PatternError::DuplicateWindow { first, second: i });
        }
    }
    Ok(CodeTable {
        order,
        window_length: k - order as usize,
        entries,
    })
}

/// Colors entered by each code in a transition window, prefixed by `first`.
pub fn colors_from_transitions(first: ColorLabel, codes: &[TransitionCode]) -> Vec<ColorLabel> {
    std::iter::once(first)
        .chain(codes.iter().map(|c| c.entered()))
        .collect()
}

/// Axis-aligned raster of the pattern; stripe `i` spans columns `[i*w, (i+1)*w)`.
///
/// Columns past the last stripe stay black.
pub fn rasterize_pattern(
    pattern: &StripePattern,
    width_px: usize,
    height_px: usize,
    stripe_width_px: usize,
) -> Result<RadianceImage, PatternError> {
    if stripe_width_px == 0 {
        return Err(PatternError::StripeWidth);
    }
    if width_px < stripe_width_px {
        return Err(PatternError::RasterTooNarrow {
            width: width_px,
            stripe: stripe_width_px,
        });
    }
    let stripes = pattern.stripes();
    Ok(Raster::from_fn(width_px, height_px, |x, _| {
        stripes
            .get(x / stripe_width_px)
            .map(|c| c.rgb())
            .unwrap_or([0.0; 3])
    }))
}

/// Horizontal derivative visualization of an 8-bit raster: the forward
/// difference per channel, offset by 255 and halved into `0..=255`.
pub fn derivative_visualization(image: &Rgb8Image) -> Rgb8Image {
    let (w, h) = image.dims();
    Raster::from_fn(w, h, |x, y| {
        let a = image.get(x, y);
        let b = if x + 1 < w { image.get(x + 1, y) } else { a };
        let mut out = [0u8; 3];
        for c in 0..3 {
            let d = b[c] as i32 - a[c] as i32;
            out[c] = ((d + 255) / 2) as u8;
        }
        out
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use std::collections::HashSet;

    /// Independent oracle: every adjacent-distinct string of length k.
    fn enumerate_windows(k: usize) -> Vec<Vec<ColorLabel>> {
        let mut all = Vec::new();
        let total = 3usize.pow(k as u32);
        for mut code in 0..total {
            let mut w = Vec::with_capacity(k);
            for _ in 0..k {
                w.push(ColorLabel::ALL[code % 3]);
                code /= 3;
            }
            if w.windows(2).all(|p| p[0] != p[1]) {
                all.push(w);
            }
        }
        all
    }

    #[test]
    fn count_matches_enumeration_and_known_values() {
        assert_eq!(count_subpatterns(7, 3).unwrap(), 192);
        assert_eq!(count_subpatterns(1, 3).unwrap(), 3);
        assert_eq!(count_subpatterns(3, 3).unwrap(), 12);
        for k in 1..=8 {
            assert_eq!(count_subpatterns(k, 3).unwrap(), enumerate_windows(k).len());
        }
        assert!(count_subpatterns(0, 3).is_err());
        assert!(count_subpatterns(3, 1).is_err());
    }

    #[test]
    fn k7_pattern_covers_every_window_once() {
        let p = generate_pattern(7, 3).unwrap();
        assert_eq!(p.len(), 198);
        let seen: HashSet<Vec<ColorLabel>> =
            (0..p.num_windows()).map(|i| p.window_at(i).to_vec()).collect();
        let expected: HashSet<Vec<ColorLabel>> = enumerate_windows(7).into_iter().collect();
        assert_eq!(seen, expected);
    }

    #[test]
    fn k2_pattern_matches_brute_force_over_orderings() {
        // Brute force: every 7-stripe string whose 6 windows are the 6 ordered pairs.
        let mut valid = HashSet::new();
        for code in 0..3usize.pow(7) {
            let mut c = code;
            let s: Vec<ColorLabel> = (0..7)
                .map(|_| {
                    let v = ColorLabel::ALL[c % 3];
                    c /= 3;
                    v
                })
                .collect();
            let pairs: HashSet<(ColorLabel, ColorLabel)> =
                s.windows(2).map(|p| (p[0], p[1])).collect();
            if s.windows(2).all(|p| p[0] != p[1]) && pairs.len() == 6 {
                valid.insert(s);
            }
        }
        let p = generate_pattern(2, 3).unwrap();
        assert_eq!(p.len(), 7);
        assert!(valid.contains(p.stripes()), "{:?} not a full traversal", p.to_text());
    }

    #[test]
    fn generation_is_deterministic_and_starts_at_smallest_node() {
        let a = generate_pattern(5, 3).unwrap();
        let b = generate_pattern(5, 3).unwrap();
        assert_eq!(a, b);
        assert_eq!(&a.to_text()[..4], "RGRG");
    }

    #[test]
    fn generation_rejects_bad_parameters() {
        assert!(matches!(generate_pattern(1, 3), Err(PatternError::WindowTooShort { .. })));
        assert!(matches!(generate_pattern(4, 4), Err(PatternError::UnsupportedColors(4))));
    }

    #[test]
    fn restricted_graph_reports_partial_walk() {
        // Forbid every window that starts with B: the walk cannot cover the rest.
        let seq = eulerian_sequence(3, &ColorLabel::ALL, |w| w[0] != ColorLabel::B);
        let windows = seq.len() + 1 - 3;
        assert!(windows < count_subpatterns(3, 3).unwrap());
        assert!(seq.windows(2).all(|p| p[0] != p[1]));
    }

    #[test]
    fn window_lookup_edges() {
        let p = generate_pattern(7, 3).unwrap();
        assert_eq!(p.window_lookup(p.window_at(0)).unwrap(), Some(0));
        assert_eq!(p.window_lookup(&p.stripes()[198 - 7..]).unwrap(), Some(191));
        let mut bad = p.window_at(3).to_vec();
        bad[2] = bad[1];
        assert_eq!(p.window_lookup(&bad).unwrap(), None);
        assert!(matches!(
            p.window_lookup(&bad[..6]),
            Err(PatternError::WindowLength { expected: 7, got: 6 })
        ));
    }

    #[test]
    fn transition_code_semantics() {
        use ColorLabel::*;
        use TransitionCode::*;
        assert_eq!(TransitionCode::between(R, G), Some(PosRG));
        assert_eq!(PosRG.signature(), [-1.0, 1.0, 0.0]);
        assert_eq!(PosRG.reversed(), NegRG);
        // Entered-color classes.
        for (color, codes) in [(R, [PosBR, NegRG]), (G, [PosRG, NegGB]), (B, [PosGB, NegBR])] {
            for c in codes {
                assert_eq!(c.entered(), color);
            }
        }
        for c in TransitionCode::ALL {
            assert_eq!(c.reversed().reversed(), c);
            assert_eq!(TransitionCode::between(c.exited(), c.entered()), Some(c));
        }
        assert_eq!(TransitionCode::between(B, B), None);
    }

    #[test]
    fn code_tables_keep_all_windows_distinct() {
        let p = generate_pattern(7, 3).unwrap();
        let t1 = build_code_table(&p, 1).unwrap();
        let t2 = build_code_table(&p, 2).unwrap();
        assert_eq!(t1.len(), 192);
        assert_eq!(t2.len(), 192);
        assert_eq!(t1.window_length(), 6);
        assert_eq!(t2.window_length(), 5);
        let codes = p.transitions();
        for i in 0..p.num_windows() {
            assert_eq!(t1.lookup_transitions(&codes[i..i + 6]), Some(i));
            let so: Vec<SecondOrderCode> = codes[i..i + 6]
                .windows(2)
                .map(|c| SecondOrderCode::from_transitions(c[0], c[1]).unwrap())
                .collect();
            assert_eq!(t2.lookup_second_order(&so), Some(i));
        }
        assert!(build_code_table(&p, 3).is_err());
    }

    #[test]
    fn order_one_codes_of_rgb_prefix() {
        use ColorLabel::*;
        let p = StripePattern::new(vec![R, G, B, R, B, G, R], 7, 4).unwrap();
        let codes = p.transitions();
        assert_eq!(&codes[..2], &[TransitionCode::PosRG, TransitionCode::PosGB]);
    }

    #[test]
    fn second_order_code_recovers_middle_color() {
        use ColorLabel::*;
        let through = SecondOrderCode::from_colors(R, G, B).unwrap();
        assert_eq!(through.signature(), [1, -2, 1]);
        assert_eq!(through, SecondOrderCode::from_colors(B, G, R).unwrap());
        let ret = SecondOrderCode::from_colors(R, G, R).unwrap();
        assert_eq!(ret.signature(), [2, -2, 0]);
        for a in ColorLabel::ALL {
            for b in ColorLabel::ALL {
                for c in ColorLabel::ALL {
                    if let Some(code) = SecondOrderCode::from_colors(a, b, c) {
                        assert_eq!(code.middle(), b);
                    }
                }
            }
        }
        assert!(SecondOrderCode::from_transitions(TransitionCode::PosRG, TransitionCode::PosRG)
            .is_none());
    }

    #[test]
    fn rasterization() {
        let p = generate_pattern(7, 3).unwrap();
        let img = rasterize_pattern(&p, 198 * 4, 3, 4).unwrap();
        assert_eq!(img.width(), 792);
        let c0 = img.get(0, 0);
        assert_eq!(c0.iter().filter(|&&v| v == 1.0).count(), 1);
        assert_eq!(c0.iter().filter(|&&v| v == 0.0).count(), 2);
        assert_eq!(*img.get(4, 2), p.stripes()[1].rgb());
        assert!(matches!(
            rasterize_pattern(&p, 3, 3, 4),
            Err(PatternError::RasterTooNarrow { .. })
        ));
    }

    #[test]
    fn derivative_visualization_offsets_and_halves() {
        let img = Rgb8Image::from_vec(3, 1, vec![[255, 0, 0], [0, 255, 0], [0, 255, 0]]);
        let d = derivative_visualization(&img);
        assert_eq!(*d.get(0, 0), [0, 255, 127]);
        assert_eq!(*d.get(1, 0), [127, 127, 127]);
        assert_eq!(*d.get(2, 0), [127, 127, 127]);
    }

    #[test]
    fn text_round_trip_and_validation() {
        let p = generate_pattern(4, 3).unwrap();
        let q = StripePattern::from_text(&p.to_text(), 4, 4).unwrap();
        assert_eq!(p, q);
        assert!(matches!(
            StripePattern::from_text("RRG", 2, 4),
            Err(PatternError::AdjacentRepeat(0, 1))
        ));
        assert!(matches!(
            StripePattern::from_text("RGRG", 2, 4),
            Err(PatternError::DuplicateWindow { first: 0, second: 2 })
        ));
        assert!(matches!(
            StripePattern::from_text("RGX", 2, 4),
            Err(PatternError::BadChar('X'))
        ));
    }

    proptest! {
        #[test]
        fn generated_patterns_are_valid(k in 2usize..=9) {
            let p = generate_pattern(k, 3).unwrap();
            prop_assert_eq!(p.num_windows(), count_subpatterns(k, 3).unwrap());
            prop_assert!(p.stripes().windows(2).all(|w| w[0] != w[1]));
            for i in 0..p.num_windows() {
                prop_assert_eq!(p.window_lookup(p.window_at(i)).unwrap(), Some(i));
            }
        }

        #[test]
        fn entered_colors_rebuild_windows(k in 3usize..=8, pick in any::<prop::sample::Index>()) {
            let p = generate_pattern(k, 3).unwrap();
            let i = pick.index(p.num_windows());
            let w = p.window_at(i);
            let codes: Vec<TransitionCode> =
                w.windows(2).map(|c| TransitionCode::between(c[0], c[1]).unwrap()).collect();
            prop_assert_eq!(colors_from_transitions(w[0], &codes), w.to_vec());
        }
    }
}
