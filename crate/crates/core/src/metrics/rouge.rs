use super::tokenize;

pub const ROUGE_BETA: f64 = 1.2;

pub fn lcs_len(a: &[String], b: &[String]) -> usize {
    let mut prev = vec![0usize; b.len() + 1];
    let mut cur = vec![0usize; b.len() + 1];
    for x in a {
        for (j, y) in b.iter().enumerate() {
            cur[j + 1] = if x == y {
                prev[j] + 1
            } else {
                cur[j].max(prev[j + 1])
            };
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}

/// ROUGE-L over pre-tokenized text. Precision and recall are each maximized
/// over references before forming the F-measure.
pub fn rouge_l_tokens(hyp: &[String], refs: &[Vec<String>]) -> f64 {
    if hyp.is_empty() {
        return 0.0;
    }
    let (mut p, mut r) = (0.0f64, 0.0f64);
    for rf in refs.iter().filter(|r| !r.is_empty()) {
        let l = lcs_len(hyp, rf) as f64;
        p = p.max(l / hyp.len() as f64);
        r = r.max(l / rf.len() as f64);
    }
    if p == 0.0 || r == 0.0 {
        return 0.0;
    }
    let b2 = ROUGE_BETA * ROUGE_BETA;
    (1.0 + b2) * p * r / (r + b2 * p)
}

pub fn rouge_l(hypothesis: &str, references: &[&str]) -> f64 {
    let refs: Vec<_> = references.iter().map(|r| tokenize(r)).collect();
    rouge_l_tokens(&tokenize(hypothesis), &refs)
}
