use super::Vocabulary;
use crate::error::{Error, Result};
use crate::scalar::{squared_distance, Scalar};

/// `a : b :: c : expected`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct AnalogyQuery {
    pub a: String,
    pub b: String,
    pub c: String,
    pub expected: String,
}

/// The entity nearest to `b - a + c`, excluding the three query entities.
/// Ties go to the lexicographically smallest name.
pub fn answer_analogy<S: Scalar>(v: &Vocabulary<S>, a: &str, b: &str, c: &str) -> Result<String> {
    let get = |n: &str| v.entity(n).ok_or_else(|| Error::UnknownEntity(n.to_string()));
    let (va, vb, vc) = (get(a)?, get(b)?, get(c)?);
    let target: Vec<S> = (0..v.dim()).map(|i| vb[i] - va[i] + vc[i]).collect();
    let mut best: Option<(S, &str)> = None;
    for (i, name) in v.entity_names().iter().enumerate() {
        if name == a || name == b || name == c {
            continue;
        }
        let d = squared_distance(&target, v.entity_at(i));
        let better = match best {
            None => true,
            Some((bd, bn)) => d < bd || (d == bd && name.as_str() < bn),
        };
        if better {
            best = Some((d, name));
        }
    }
    best.map(|(_, n)| n.to_string()).ok_or(Error::Empty("no candidate entity"))
}

/// Lines of `a b c expected`; `#` starts a comment.
pub fn parse_analogies(text: &str) -> Result<Vec<AnalogyQuery>> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let f: Vec<&str> = line.split_whitespace().collect();
        if f.len() != 4 {
            return Err(Error::malformed(i + 1, "expected `a b c expected`"));
        }
        out.push(AnalogyQuery { a: f[0].into(), b: f[1].into(), c: f[2].into(), expected: f[3].into() });
    }
    Ok(out)
}

/// Correct answers and per-query results. Queries naming an unknown entity
/// are errors.
pub fn analogy_accuracy<S: Scalar>(v: &Vocabulary<S>, queries: &[AnalogyQuery]) -> Result<(usize, Vec<String>)> {
    let mut correct = 0;
    let mut answers = Vec::with_capacity(queries.len());
    for q in queries {
        if v.entity(&q.expected).is_none() {
            return Err(Error::UnknownEntity(q.expected.clone()));
        }
        let ans = answer_analogy(v, &q.a, &q.b, &q.c)?;
        if ans == q.expected {
            correct += 1;
        }
        answers.push(ans);
    }
    Ok((correct, answers))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn vocab() -> Vocabulary<f64> {
        let names = ["a", "b", "c", "d", "e"].map(String::from).to_vec();
        let mut v = Vocabulary::new(2, names, vec![]).unwrap();
        v.set_entity("a", &[0.0, 0.0]).unwrap();
        v.set_entity("b", &[1.0, 0.0]).unwrap();
        v.set_entity("c", &[0.0, 1.0]).unwrap();
        v.set_entity("d", &[1.0, 1.0]).unwrap();
        v.set_entity("e", &[5.0, 5.0]).unwrap();
        v
    }

    #[test]
    fn exact_parallelogram() {
        assert_eq!(answer_analogy(&vocab(), "a", "b", "c").unwrap(), "d");
    }

    #[test]
    fn query_entities_are_excluded() {
        // b - a + a = b, which is excluded
        assert_eq!(answer_analogy(&vocab(), "a", "b", "a").unwrap(), "d");
    }

    #[test]
    fn unknown_entity() {
        assert!(matches!(answer_analogy(&vocab(), "a", "zz", "c"), Err(Error::UnknownEntity(_))));
    }
}
