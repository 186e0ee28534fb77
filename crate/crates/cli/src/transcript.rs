use std::fmt::Write;

use a2t::decoder::AnswerSource;
use a2t::TranslationResult;

/// Candidates listed per step, best combined score first.
const SHOWN: usize = 5;

pub fn render(r: &TranslationResult) -> String {
    let mut out = String::new();
    let source = match r.answer_source {
        AnswerSource::Predicted => "predicted",
        AnswerSource::GroundTruth => "ground truth",
    };
    let _ = writeln!(out, "question: {}", r.question);
    let _ = writeln!(out, "vqa answer: {}", r.predicted_answer);
    let _ = writeln!(out, "prompt answer: {} ({source})", r.answer);
    let _ = writeln!(out, "prompt: {}", r.prompt.replace('\n', "\\n"));

    let [rows, cols] = r.patch_grid;
    let kept = r.patch_mask.iter().filter(|&&b| b).count();
    let _ = writeln!(out, "mask: {kept} of {} patches kept", rows * cols);
    for row in r.patch_mask.chunks(cols.max(1)) {
        let line: String = row.iter().map(|&b| if b { '#' } else { '.' }).collect();
        let _ = writeln!(out, "  {line}");
    }

    let steps = r.steps.iter().chain(r.eos_step.as_ref());
    for (i, step) in steps.enumerate() {
        let chosen = &step.candidates[step.chosen];
        let _ = writeln!(
            out,
            "step {i}: {:?}  lm={:.4} f={:.4} combined={:.4}",
            chosen.candidate.token.surface, chosen.candidate.lm_prob, chosen.f, chosen.combined
        );
        let mut order: Vec<usize> = (0..step.candidates.len()).collect();
        order.sort_by(|&a, &b| {
            step.candidates[b]
                .combined
                .total_cmp(&step.candidates[a].combined)
        });
        for &j in order.iter().take(SHOWN) {
            let c = &step.candidates[j];
            let mark = if j == step.chosen { '*' } else { ' ' };
            let _ = writeln!(
                out,
                "   {mark} {:<12} lm={:.4} cos={:.4} f={:.4} | {}",
                format!("{:?}", c.candidate.token.surface),
                c.candidate.lm_prob,
                c.candidate.match_score,
                c.f,
                c.candidate.sentence
            );
        }
        if step.candidates.len() > SHOWN {
            let _ = writeln!(out, "     ... {} more", step.candidates.len() - SHOWN);
        }
    }
    let stop = serde_json::to_value(r.stop_reason).unwrap_or_default();
    let _ = writeln!(out, "stop: {}", stop.as_str().unwrap_or("?"));
    let _ = writeln!(out, "text: {}", r.text);
    out
}
