use std::hash::Hasher;

use fnv::FnvHasher;

use crate::corpus::Product;

/// Deterministic stand-in for a sentence encoder: signed feature hashing of
/// character 3-grams of the `:`-joined attribute string, L2-normalised.
///
/// `dims` below 8 is raised to 8. A string with no 3-grams maps to the first
/// basis vector.
pub fn hash_embed(product: &Product, dims: usize, seed: u64) -> Vec<f32> {
    hash_text(&product.attribute_string(), dims, seed)
}

pub(crate) fn hash_text(text: &str, dims: usize, seed: u64) -> Vec<f32> {
    let dims = dims.max(8);
    let chars: Vec<char> = std::iter::once('\u{2}')
        .chain(text.to_lowercase().chars())
        .chain(std::iter::once('\u{3}'))
        .collect();
    let mut v = vec![0f32; dims];
    let mut buf = [0u8; 12];
    for w in chars.windows(3) {
        let mut h = FnvHasher::with_key(seed ^ 0xcbf2_9ce4_8422_2325);
        for c in w {
            h.write(c.encode_utf8(&mut buf).as_bytes());
        }
        let h = h.finish();
        let bucket = (h % dims as u64) as usize;
        v[bucket] += if h >> 63 == 0 { 1.0 } else { -1.0 };
    }
    let norm = v.iter().map(|x| (*x as f64) * (*x as f64)).sum::<f64>().sqrt();
    if norm == 0.0 {
        v[0] = 1.0;
    } else {
        for x in &mut v {
            *x = (*x as f64 / norm) as f32;
        }
    }
    v
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{ItemId, Product};
    use proptest::prelude::*;
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;

    fn product(title: &str) -> Product {
        Product {
            id: ItemId::parse_qualified("UK:x").unwrap(),
            title: title.into(),
            brand: None,
            price: None,
            extra: vec![],
        }
    }

    fn ip(a: &[f32], b: &[f32]) -> f32 {
        a.iter().zip(b).map(|(x, y)| x * y).sum()
    }

    #[test]
    fn identical_products_identical_vectors() {
        let p = product("USB cable 2m");
        assert_eq!(hash_embed(&p, 64, 1), hash_embed(&p.clone(), 64, 1));
        assert_ne!(hash_embed(&p, 64, 1), hash_embed(&p, 64, 2));
    }

    #[test]
    fn degenerate_input_is_first_basis_vector() {
        let v = hash_text("", 16, 0);
        assert_eq!(v[0], 1.0);
        assert!(v[1..].iter().all(|&x| x == 0.0));
    }

    #[test]
    fn near_duplicates_beat_disjoint_alphabets() {
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let first: Vec<char> = "abcdefghijklm".chars().collect();
        let second: Vec<char> = "nopqrstuvwxyz".chars().collect();
        for _ in 0..20 {
            let base: String = (0..40).map(|_| *first.choose(&mut rng).unwrap()).collect();
            // Change 4 of 40 characters: 90% shared.
            let mut near: Vec<char> = base.chars().collect();
            for k in 0..4 {
                near[k * 10 + 5] = *first.choose(&mut rng).unwrap();
            }
            let near: String = near.into_iter().collect();
            let other: String = (0..40).map(|_| *second.choose(&mut rng).unwrap()).collect();
            let (a, b, c) = (
                hash_text(&base, 128, 7),
                hash_text(&near, 128, 7),
                hash_text(&other, 128, 7),
            );
            assert!(ip(&a, &b) > ip(&a, &c), "{base} / {near} / {other}");
        }
    }

    proptest! {
        #[test]
        fn unit_norm(s in ".{0,60}", dims in 8usize..300, seed in any::<u64>()) {
            let v = hash_text(&s, dims, seed);
            prop_assert_eq!(v.len(), dims);
            let n = v.iter().map(|x| (*x as f64).powi(2)).sum::<f64>().sqrt();
            prop_assert!((n - 1.0).abs() <= 1e-6);
        }
    }
}
