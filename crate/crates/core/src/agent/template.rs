//! `{placeholder}` substitution for prompt templates. `{{` and `}}` are literal braces.

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum TemplateError {
    #[error("unresolved placeholder {{{0}}}")]
    Unresolved(String),
    #[error("unclosed placeholder at byte {0}")]
    Unclosed(usize),
    #[error("stray closing brace at byte {0}")]
    StrayClose(usize),
}

/// Renders `template`, resolving each placeholder through `lookup`.
pub fn render(template: &str, mut lookup: impl FnMut(&str) -> Option<String>) -> Result<String, TemplateError> {
    let mut out = String::with_capacity(template.len());
    let mut rest = template;
    let mut offset = 0;
    while let Some(i) = rest.find(['{', '}']) {
        out.push_str(&rest[..i]);
        let tail = &rest[i..];
        let consumed = if tail.starts_with("{{") {
            out.push('{');
            2
        } else if tail.starts_with("}}") {
            out.push('}');
            2
        } else if tail.starts_with('}') {
            return Err(TemplateError::StrayClose(offset + i));
        } else {
            let end = tail.find('}').ok_or(TemplateError::Unclosed(offset + i))?;
            let key = &tail[1..end];
            if key.contains('{') {
                return Err(TemplateError::Unclosed(offset + i));
            }
            out.push_str(&lookup(key.trim()).ok_or_else(|| TemplateError::Unresolved(key.to_string()))?);
            end + 1
        };
        rest = &tail[consumed..];
        offset += i + consumed;
    }
    out.push_str(rest);
    Ok(out)
}

/// Placeholder names used by `template`, in order of appearance.
pub fn placeholders(template: &str) -> Vec<String> {
    let mut found = Vec::new();
    let _ = render(template, |k| {
        found.push(k.to_string());
        Some(String::new())
    });
    found
}

#[cfg(test)]
mod tests {
    use super::*;

    fn vars(k: &str) -> Option<String> {
        match k {
            "agent_name" => Some("Mei Lin".into()),
            "question" => Some("punish or not".into()),
            _ => None,
        }
    }

    #[test]
    fn substitutes_and_escapes() {
        let got = render("{agent_name} asks: {question}? {{literal}}", vars).unwrap();
        assert_eq!(got, "Mei Lin asks: punish or not? {literal}");
    }

    #[test]
    fn unknown_placeholder_is_an_error() {
        assert_eq!(render("hello {foo}", vars), Err(TemplateError::Unresolved("foo".into())));
        assert_eq!(render("hello {agent_name", vars), Err(TemplateError::Unclosed(6)));
        assert_eq!(render("a } b", vars), Err(TemplateError::StrayClose(2)));
    }

    #[test]
    fn lists_placeholders() {
        assert_eq!(placeholders("{a} and {b.c} {{x}}"), vec!["a", "b.c"]);
    }
}
