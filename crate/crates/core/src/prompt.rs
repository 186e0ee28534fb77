//! Language-model prompts built from a task template, the question, and the
//! answer, optionally preceded by in-context examples.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const QUESTION: &str = "<q>";
pub const ANSWER: &str = "<a>";

pub const DEFAULT_TEMPLATE_ID: &str = "answer_and_explain";

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PromptTemplate {
    id: String,
    pattern: String,
}

impl PromptTemplate {
    pub fn new(id: impl Into<String>, pattern: impl Into<String>) -> Result<Self> {
        let (id, pattern) = (id.into(), pattern.into());
        for ph in [QUESTION, ANSWER] {
            let n = pattern.matches(ph).count();
            if n != 1 {
                return Err(Error::InvalidTemplate(format!(
                    "template {id:?} must contain {ph} exactly once, found {n}"
                )));
            }
        }
        Ok(Self { id, pattern })
    }

    pub fn id(&self) -> &str {
        &self.id
    }

    pub fn pattern(&self) -> &str {
        &self.pattern
    }

    /// The template used unless another is requested.
    pub fn default_template() -> Self {
        builtin(DEFAULT_TEMPLATE_ID).expect("default template is built in")
    }

    /// Substitutes question and answer. If the pattern puts punctuation right
    /// after a placeholder, the same trailing punctuation on the value is
    /// dropped so it is not doubled.
    pub fn render(&self, question: &str, answer: &str) -> String {
        let mut out = String::with_capacity(self.pattern.len() + question.len() + answer.len());
        let mut rest = self.pattern.as_str();
        while let Some(pos) = rest.find('<') {
            let (head, tail) = rest.split_at(pos);
            out.push_str(head);
            let value = if tail.starts_with(QUESTION) {
                Some((question, QUESTION.len()))
            } else if tail.starts_with(ANSWER) {
                Some((answer, ANSWER.len()))
            } else {
                None
            };
            match value {
                Some((v, len)) => {
                    let after = tail[len..].chars().next();
                    out.push_str(&trim_value(v, after));
                    rest = &tail[len..];
                }
                None => {
                    out.push('<');
                    rest = &tail[1..];
                }
            }
        }
        out.push_str(rest);
        out
    }
}

fn trim_value(v: &str, following: Option<char>) -> String {
    let v = v.trim();
    match following {
        Some(c) if c.is_ascii_punctuation() => v.trim_end_matches(c).trim_end().to_string(),
        _ => v.to_string(),
    }
}

/// Built-in template ids with their patterns.
pub const BUILTIN_TEMPLATES: &[(&str, &str)] = &[
    ("qa_because", "<q>? The answer is <a> because"),
    ("qae", "Question: <q>? Answer: <a>. Explanation:"),
    (
        "qae_newline",
        "Question: <q>?\n Answer: <a>.\n Explanation:",
    ),
    (
        "explain_answer",
        "Explain the Answer: <q>? The answer is <a> because",
    ),
    (
        "answer_and_explain_newline",
        "Answer and Explain: <q>?\n The answer is <a> because",
    ),
    (
        "answer_and_explain",
        "Answer and Explain: <q>? The answer is <a> because",
    ),
];

pub fn builtin(id: &str) -> Option<PromptTemplate> {
    BUILTIN_TEMPLATES
        .iter()
        .find(|(i, _)| *i == id)
        .map(|(i, p)| PromptTemplate::new(*i, *p).expect("builtin templates are valid"))
}

/// Parses a template file: one `id<TAB>pattern` per line. `\n` inside a
/// pattern stands for a newline. Blank lines and lines starting with `#` are
/// skipped.
pub fn parse_templates(text: &str) -> Result<Vec<PromptTemplate>> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty() && !l.starts_with('#'))
        .map(|(n, line)| {
            let (id, pattern) = line.split_once('\t').ok_or_else(|| {
                Error::InvalidTemplate(format!("line {}: expected id<TAB>pattern", n + 1))
            })?;
            PromptTemplate::new(id.trim(), pattern.replace("\\n", "\n"))
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct InContextExample {
    pub question: String,
    pub answer: String,
    pub explanation: String,
}

/// Layout of n-shot prompts.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NShotStyle {
    /// Placed between consecutive blocks.
    pub separator: String,
}

impl Default for NShotStyle {
    fn default() -> Self {
        Self {
            separator: " ".into(),
        }
    }
}

impl NShotStyle {
    pub fn newline() -> Self {
        Self {
            separator: "\n".into(),
        }
    }
}

/// `Question: q? Answer: a. Explanation: e.` per example, then the query
/// block ending in `Explanation:`.
pub fn render_n_shot(
    examples: &[InContextExample],
    question: &str,
    answer: &str,
    style: &NShotStyle,
) -> String {
    let q = |s: &str| trim_value(s, Some('?'));
    let dot = |s: &str| trim_value(s, Some('.'));
    let mut blocks: Vec<String> = examples
        .iter()
        .map(|ex| {
            format!(
                "Question: {}? Answer: {}. Explanation: {}.",
                q(&ex.question),
                dot(&ex.answer),
                dot(&ex.explanation)
            )
        })
        .collect();
    blocks.push(format!(
        "Question: {}? Answer: {}. Explanation:",
        q(question),
        dot(answer)
    ));
    blocks.join(&style.separator)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn default_template_example() {
        let t = PromptTemplate::default_template();
        assert_eq!(
            t.render("Is that healthy", "no"),
            "Answer and Explain: Is that healthy? The answer is no because"
        );
    }

    #[test]
    fn custom_template_example() {
        let t = PromptTemplate::new("t", "<q>? the answer is <a> because").unwrap();
        assert_eq!(
            t.render("Is that healthy", "no"),
            "Is that healthy? the answer is no because"
        );
    }

    #[test]
    fn question_mark_not_duplicated() {
        let t = PromptTemplate::default_template();
        assert_eq!(
            t.render("Is that healthy?", "no"),
            t.render("Is that healthy", "no")
        );
        assert_eq!(t.render("Is that healthy?", "no").matches('?').count(), 1);
    }

    #[test]
    fn builtin_newline_template() {
        let t = builtin("answer_and_explain_newline").unwrap();
        assert_eq!(
            t.render("Is that healthy", "no"),
            "Answer and Explain: Is that healthy?\n The answer is no because"
        );
    }

    #[test]
    fn rejects_missing_or_repeated_placeholder() {
        assert!(matches!(
            PromptTemplate::new("x", "no answer <q>"),
            Err(Error::InvalidTemplate(_))
        ));
        assert!(PromptTemplate::new("x", "<q> <q> <a>").is_err());
    }

    #[test]
    fn parses_template_file() {
        let ts =
            parse_templates("# comment\nmine\tQ: <q>?\\n A: <a>.\n\nother\t<q> <a>\n").unwrap();
        assert_eq!(ts.len(), 2);
        assert_eq!(ts[0].pattern(), "Q: <q>?\n A: <a>.");
        assert!(parse_templates("no tab here <q> <a>").is_err());
    }

    #[test]
    fn zero_shot_structured_prompt() {
        assert_eq!(
            render_n_shot(&[], "Is that healthy", "no", &NShotStyle::default()),
            "Question: Is that healthy? Answer: no. Explanation:"
        );
    }

    #[test]
    fn one_shot_prompt() {
        let ex = InContextExample {
            question: "Is it raining".into(),
            answer: "yes".into(),
            explanation: "the street is wet".into(),
        };
        let p = render_n_shot(&[ex], "Is that healthy", "no", &NShotStyle::default());
        assert_eq!(
            p,
            "Question: Is it raining? Answer: yes. Explanation: the street is wet. \
             Question: Is that healthy? Answer: no. Explanation:"
        );
        let p = render_n_shot(
            &[InContextExample {
                question: "Is it raining?".into(),
                answer: "yes".into(),
                explanation: "the street is wet.".into(),
            }],
            "q",
            "a",
            &NShotStyle::newline(),
        );
        assert!(p.starts_with(
            "Question: Is it raining? Answer: yes. Explanation: the street is wet.\nQuestion: q?"
        ));
    }

    #[test]
    fn five_shot_has_five_blocks() {
        let ex = InContextExample {
            question: "q".into(),
            answer: "a".into(),
            explanation: "e".into(),
        };
        let p = render_n_shot(&vec![ex; 5], "x", "y", &NShotStyle::default());
        assert_eq!(p.matches("Explanation: e.").count(), 5);
        assert!(p.ends_with("Question: x? Answer: y. Explanation:"));
    }

    proptest! {
        #[test]
        fn n_shot_question_count(n in 0usize..8, q in "[a-z ]{1,20}", a in "[a-z]{1,8}") {
            let ex = InContextExample { question: q.clone(), answer: a.clone(), explanation: "because".into() };
            let p = render_n_shot(&vec![ex; n], &q, &a, &NShotStyle::default());
            prop_assert_eq!(p.matches("Question:").count(), n + 1);
        }

        #[test]
        fn render_is_injective(
            q1 in "[a-z]{1,6}( [a-z]{1,6}){0,3}", a1 in "[a-z]{1,6}( [a-z]{1,6}){0,2}",
            q2 in "[a-z]{1,6}( [a-z]{1,6}){0,3}", a2 in "[a-z]{1,6}( [a-z]{1,6}){0,2}",
        ) {
            let t = PromptTemplate::default_template();
            prop_assert_eq!(t.render(&q1, &a1) == t.render(&q2, &a2), q1 == q2 && a1 == a2);
        }
    }
}
