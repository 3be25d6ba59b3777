/// Minimum number of insertions, deletions and substitutions by plain
/// recursion over both sequences.
pub fn distance<T: PartialEq>(a: &[T], b: &[T]) -> usize {
    match (a.split_first(), b.split_first()) {
        (None, _) => b.len(),
        (_, None) => a.len(),
        (Some((x, ar)), Some((y, br))) => {
            let sub = distance(ar, br) + usize::from(x != y);
            sub.min(distance(ar, b) + 1).min(distance(a, br) + 1)
        }
    }
}
