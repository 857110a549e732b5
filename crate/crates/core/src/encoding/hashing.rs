use super::FeatureVector;

pub const DEFAULT_SALT: &str = "some_fixed_string";

const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;

/// 64-bit FNV-1a.
pub fn fnv1a64(bytes: &[u8]) -> u64 {
    bytes
        .iter()
        .fold(FNV_OFFSET, |h, b| (h ^ u64::from(*b)).wrapping_mul(FNV_PRIME))
}

fn fnv1a64_concat(a: &[u8], b: &[u8]) -> u64 {
    b.iter()
        .fold(fnv1a64(a), |h, byte| (h ^ u64::from(*byte)).wrapping_mul(FNV_PRIME))
}

/// The two bucket indices a string sets: `h(s) mod n` and `h(s + salt) mod n`.
pub fn bucket_indices(s: &str, n: usize, salt: &str) -> (usize, usize) {
    let n = n as u64;
    let first = fnv1a64(s.as_bytes()) % n;
    let second = fnv1a64_concat(s.as_bytes(), salt.as_bytes()) % n;
    (first as usize, second as usize)
}

/// Bit vector of length `n` with two probes per string.
pub fn hash_buckets<'a, I>(strings: I, n: usize, salt: &str) -> FeatureVector
where
    I: IntoIterator<Item = &'a str>,
{
    let mut v = vec![0.0; n];
    for s in strings {
        let (a, b) = bucket_indices(s, n, salt);
        v[a] = 1.0;
        v[b] = 1.0;
    }
    FeatureVector(v)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn fnv_reference_vectors() {
        assert_eq!(fnv1a64(b""), 0xcbf29ce484222325);
        assert_eq!(fnv1a64(b"a"), 0xaf63dc4c8601ec8c);
        assert_eq!(fnv1a64(b"foobar"), 0x85944171f73967e8);
        assert_eq!(fnv1a64_concat(b"foo", b"bar"), fnv1a64(b"foobar"));
    }

    #[test]
    fn empty_set_is_zero() {
        assert_eq!(hash_buckets([], 100, DEFAULT_SALT).0, vec![0.0; 100]);
    }

    #[test]
    fn single_string_sets_one_or_two_bits() {
        let v = hash_buckets(["a"], 100, DEFAULT_SALT);
        let (i, j) = bucket_indices("a", 100, DEFAULT_SALT);
        let ones = v.0.iter().filter(|x| **x == 1.0).count();
        assert_eq!(ones, if i == j { 1 } else { 2 });
        assert_eq!(v.0[i], 1.0);
        assert_eq!(v.0[j], 1.0);
    }

    #[test]
    fn salt_changes_second_probe() {
        let (a1, b1) = bucket_indices("path:/cart", 1 << 20, DEFAULT_SALT);
        let (a2, b2) = bucket_indices("path:/cart", 1 << 20, "other");
        assert_eq!(a1, a2);
        assert_ne!(b1, b2);
    }

    proptest! {
        #[test]
        fn permutation_invariant(mut set in prop::collection::vec("[a-z/]{1,12}", 0..15), n in 2usize..200) {
            let forward = hash_buckets(set.iter().map(String::as_str), n, DEFAULT_SALT);
            set.reverse();
            let backward = hash_buckets(set.iter().map(String::as_str), n, DEFAULT_SALT);
            prop_assert_eq!(forward, backward);
        }
    }
}
