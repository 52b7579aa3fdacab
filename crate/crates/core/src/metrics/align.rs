use super::stem::porter_stem;
use super::MeteorParams;

/// How a hypothesis/reference pair was matched.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum MatchKind {
    Exact,
    Stem,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct AlignedPair {
    pub hyp: usize,
    pub reference: usize,
    pub kind: MatchKind,
}

/// A unigram alignment between a hypothesis and a reference.
///
/// `pairs` is sorted by hypothesis index.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Alignment {
    pub matches: usize,
    pub chunks: usize,
    pub pairs: Vec<AlignedPair>,
}

impl Alignment {
    pub fn exact_matches(&self) -> usize {
        self.pairs.iter().filter(|p| p.kind == MatchKind::Exact).count()
    }
}

/// Number of maximal runs of pairs contiguous in both hypothesis and
/// reference order. `pairs` must be sorted by hypothesis index.
pub fn count_chunks(pairs: &[(usize, usize)]) -> usize {
    if pairs.is_empty() {
        return 0;
    }
    1 + pairs
        .windows(2)
        .filter(|w| !(w[1].0 == w[0].0 + 1 && w[1].1 == w[0].1 + 1))
        .count()
}

/// Two-stage exact-then-stem unigram alignment.
///
/// The returned alignment maximizes the number of exact matches, then the
/// total number of matches, then minimizes the chunk count. Remaining ties go
/// to the lexicographically smallest `(hyp, ref)` pair list.
pub fn align<S: AsRef<str>, R: AsRef<str>>(hyp: &[S], reference: &[R], params: &MeteorParams) -> Alignment {
    let candidates = candidate_pairs(hyp, reference, params.enable_stemming);
    let mut search = Search::new(&candidates, reference.len());
    search.run();
    let pairs: Vec<AlignedPair> = search
        .best_pairs
        .iter()
        .map(|&(h, r, kind)| AlignedPair { hyp: h, reference: r, kind })
        .collect();
    let plain: Vec<(usize, usize)> = pairs.iter().map(|p| (p.hyp, p.reference)).collect();
    Alignment { matches: pairs.len(), chunks: count_chunks(&plain), pairs }
}

/// For every hypothesis position, its matchable reference positions in
/// ascending order, each tagged exact or stem.
fn candidate_pairs<S: AsRef<str>, R: AsRef<str>>(
    hyp: &[S],
    reference: &[R],
    stemming: bool,
) -> Vec<Vec<(usize, MatchKind)>> {
    let ref_stems: Vec<String> = if stemming {
        reference.iter().map(|r| porter_stem(r.as_ref())).collect()
    } else {
        Vec::new()
    };
    hyp.iter()
        .map(|h| {
            let h = h.as_ref();
            let h_stem = stemming.then(|| porter_stem(h));
            reference
                .iter()
                .enumerate()
                .filter_map(|(j, r)| {
                    if r.as_ref() == h {
                        Some((j, MatchKind::Exact))
                    } else if h_stem.as_deref().is_some_and(|s| s == ref_stems[j]) {
                        Some((j, MatchKind::Stem))
                    } else {
                        None
                    }
                })
                .collect()
        })
        .collect()
}

/// Objective key: larger exact, larger total, fewer chunks.
#[derive(Clone, Copy, PartialEq, Eq)]
struct Key {
    exact: usize,
    total: usize,
    chunks: usize,
}

impl Key {
    fn better_than(&self, other: &Key) -> bool {
        (self.exact, self.total, std::cmp::Reverse(self.chunks))
            > (other.exact, other.total, std::cmp::Reverse(other.chunks))
    }
}

/// Depth-first branch and bound over hypothesis positions. Matches are tried
/// before skips and in ascending reference order, so solutions are visited in
/// lexicographic order of their pair lists and the first optimum found is the
/// lexicographically smallest one.
struct Search<'a> {
    candidates: &'a [Vec<(usize, MatchKind)>],
    used: Vec<bool>,
    current: Vec<(usize, usize, MatchKind)>,
    best: Option<Key>,
    best_pairs: Vec<(usize, usize, MatchKind)>,
}

impl<'a> Search<'a> {
    fn new(candidates: &'a [Vec<(usize, MatchKind)>], ref_len: usize) -> Self {
        Search { candidates, used: vec![false; ref_len], current: Vec::new(), best: None, best_pairs: Vec::new() }
    }

    fn run(&mut self) {
        self.visit(0, 0, 0);
    }

    fn optimistic(&self, pos: usize, exact: usize, total: usize, chunks: usize) -> Key {
        let mut extra_exact = 0;
        let mut extra_total = 0;
        for cands in &self.candidates[pos..] {
            let mut any = false;
            let mut any_exact = false;
            for &(j, kind) in cands {
                if !self.used[j] {
                    any = true;
                    any_exact |= kind == MatchKind::Exact;
                }
            }
            extra_total += usize::from(any);
            extra_exact += usize::from(any_exact);
        }
        Key { exact: exact + extra_exact, total: total + extra_total, chunks }
    }

    fn visit(&mut self, pos: usize, exact: usize, chunks: usize) {
        let total = self.current.len();
        if pos == self.candidates.len() {
            let key = Key { exact, total, chunks };
            if self.best.is_none_or(|b| key.better_than(&b)) {
                self.best = Some(key);
                self.best_pairs.clone_from(&self.current);
            }
            return;
        }
        if let Some(best) = self.best {
            if !self.optimistic(pos, exact, total, chunks).better_than(&best) {
                return;
            }
        }
        for idx in 0..self.candidates[pos].len() {
            let (j, kind) = self.candidates[pos][idx];
            if self.used[j] {
                continue;
            }
            let extends = self.current.last().is_some_and(|&(h, r, _)| h + 1 == pos && r + 1 == j);
            self.used[j] = true;
            self.current.push((pos, j, kind));
            self.visit(pos + 1, exact + usize::from(kind == MatchKind::Exact), chunks + usize::from(!extends));
            self.current.pop();
            self.used[j] = false;
        }
        self.visit(pos + 1, exact, chunks);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn p(stem: bool) -> MeteorParams {
        MeteorParams { enable_stemming: stem, ..MeteorParams::default() }
    }

    #[test]
    fn identical_sequences_form_one_chunk() {
        let a = align(&["the", "cat"], &["the", "cat"], &p(true));
        assert_eq!((a.matches, a.chunks), (2, 1));
    }

    #[test]
    fn swapped_pair_needs_two_chunks() {
        let a = align(&["the", "cat"], &["cat", "the"], &p(true));
        assert_eq!((a.matches, a.chunks), (2, 2));
    }

    #[test]
    fn stem_stage_only_when_enabled() {
        let a = align(&["plays"], &["playing"], &p(true));
        assert_eq!(a.matches, 1);
        assert_eq!(a.pairs[0].kind, MatchKind::Stem);
        assert_eq!(align(&["plays"], &["playing"], &p(false)).matches, 0);
    }

    #[test]
    fn exact_match_preferred_over_stem() {
        // hyp "play" could stem-match "playing" or exactly match "play".
        let a = align(&["play"], &["playing", "play"], &p(true));
        assert_eq!(a.pairs, vec![AlignedPair { hyp: 0, reference: 1, kind: MatchKind::Exact }]);
    }

    #[test]
    fn repeated_tokens_pick_contiguous_matching() {
        let a = align(&["a", "b", "a", "b"], &["a", "b"], &p(false));
        assert_eq!(a.matches, 2);
        assert_eq!(a.chunks, 1);
        // Lexicographically smallest of the one-chunk matchings.
        assert_eq!(a.pairs.iter().map(|x| (x.hyp, x.reference)).collect::<Vec<_>>(), vec![(0, 0), (1, 1)]);
    }

    #[test]
    fn chunk_counting() {
        assert_eq!(count_chunks(&[]), 0);
        assert_eq!(count_chunks(&[(0, 3), (1, 4), (3, 5)]), 2);
        assert_eq!(count_chunks(&[(0, 1), (1, 0)]), 2);
    }

    #[test]
    fn empty_sides() {
        let empty: [&str; 0] = [];
        assert_eq!(align(&empty, &["a"], &p(true)), Alignment::default());
        assert_eq!(align(&["a"], &empty, &p(true)), Alignment::default());
    }
}
