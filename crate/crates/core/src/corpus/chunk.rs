use super::Example;
use crate::error::{Error, Result};

/// Splits `tokens` into consecutive slices of length `max_len`; only the last
/// may be shorter.
pub fn chunk(tokens: &[u32], max_len: usize) -> Result<Vec<Vec<u32>>> {
    if max_len == 0 {
        return Err(Error::InvalidParameter("chunk length must be at least 1".into()));
    }
    Ok(tokens.chunks(max_len).map(<[u32]>::to_vec).collect())
}

/// Greedy first-fit packing in input order. Each example goes into the first
/// pack that still has room for all of it; examples are never split.
///
/// A pack holding a single example keeps that example's id; larger packs are
/// named `<first id>+<member count>`.
pub fn pack(examples: &[Example], max_len: usize) -> Result<Vec<Example>> {
    struct Bin<'a> {
        members: Vec<&'a Example>,
        used: usize,
    }

    let mut bins: Vec<Bin> = Vec::new();
    for example in examples {
        if example.len() > max_len {
            return Err(Error::InvalidParameter(format!(
                "example `{}` has {} tokens, longer than pack length {max_len}",
                example.id(),
                example.len()
            )));
        }
        match bins.iter_mut().find(|b| b.used + example.len() <= max_len) {
            Some(bin) => {
                bin.used += example.len();
                bin.members.push(example);
            }
            None => bins.push(Bin {
                members: vec![example],
                used: example.len(),
            }),
        }
    }

    bins.into_iter()
        .map(|bin| {
            if let [only] = bin.members.as_slice() {
                return Ok((*only).clone());
            }
            let mut tokens = Vec::with_capacity(bin.used);
            let mut domain_ids = Vec::with_capacity(bin.used);
            for m in &bin.members {
                tokens.extend_from_slice(m.tokens());
                domain_ids.extend_from_slice(m.domain_ids());
            }
            let id = format!("{}+{}", bin.members[0].id(), bin.members.len());
            Example::new(id, tokens, domain_ids)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ex(id: &str, len: usize, domain: u32) -> Example {
        Example::single_domain(id, (0..len as u32).collect(), domain).unwrap()
    }

    #[test]
    fn chunk_boundaries() {
        let tokens: Vec<u32> = (0..1025).collect();
        assert_eq!(chunk(&tokens[..1024], 1024).unwrap().len(), 1);
        let lens: Vec<usize> = chunk(&tokens, 1024).unwrap().iter().map(Vec::len).collect();
        assert_eq!(lens, vec![1024, 1]);
        let doc: Vec<u32> = (0..2500).collect();
        let lens: Vec<usize> = chunk(&doc, 1024).unwrap().iter().map(Vec::len).collect();
        assert_eq!(lens, vec![1024, 1024, 452]);
        assert!(chunk(&[], 1024).unwrap().is_empty());
        assert!(chunk(&tokens, 0).is_err());
    }

    #[test]
    fn pack_two_fit_together() {
        let packed = pack(&[ex("a", 600, 0), ex("b", 400, 1)], 1024).unwrap();
        assert_eq!(packed.len(), 1);
        let p = &packed[0];
        assert_eq!(p.len(), 1000);
        assert!(p.domain_ids()[..600].iter().all(|&d| d == 0));
        assert!(p.domain_ids()[600..].iter().all(|&d| d == 1));
        assert_eq!(p.id(), "a+2");
    }

    #[test]
    fn pack_never_splits() {
        let packed = pack(&[ex("a", 700, 0), ex("b", 700, 1)], 1024).unwrap();
        assert_eq!(packed.len(), 2);
        assert_eq!(packed[0], ex("a", 700, 0));
    }

    #[test]
    fn pack_is_first_fit_not_next_fit() {
        // 700 opens bin 0, 500 opens bin 1, 300 still fits in bin 0
        let packed = pack(&[ex("a", 700, 0), ex("b", 500, 0), ex("c", 300, 1)], 1024).unwrap();
        let lens: Vec<usize> = packed.iter().map(Example::len).collect();
        assert_eq!(lens, vec![1000, 500]);
    }

    #[test]
    fn pack_single_passes_through() {
        let e = ex("solo", 10, 0);
        assert_eq!(pack(std::slice::from_ref(&e), 1024).unwrap(), vec![e]);
    }

    #[test]
    fn pack_rejects_oversized() {
        assert!(pack(&[ex("a", 11, 0)], 10).is_err());
    }
}
