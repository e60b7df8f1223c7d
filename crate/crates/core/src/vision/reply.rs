//! Tolerant parsing of model replies.
//!
//! Replies follow the `{name: ..., pos: [...]}` shape from the prompts but
//! arrive in several dialects: strict JSON, JSON wrapped in a Markdown
//! fence, doubled braces, or bare unquoted keys and words. Everything is
//! normalized into a [`serde_json::Value`].

use serde_json::{Map, Number, Value};

/// Strips code fences and surrounding prose, returning the outermost
/// `{...}` or `[...]` span.
pub fn extract_json_text(reply: &str) -> Option<&str> {
    let mut text = reply.trim();
    if let Some(start) = text.find("```") {
        let after = &text[start + 3..];
        let body_start = after.find('\n').map(|i| i + 1).unwrap_or(0);
        let body = &after[body_start..];
        text = match body.find("```") {
            Some(end) => &body[..end],
            None => body,
        };
    }
    let open = text.find(['{', '['])?;
    let close_char = if text.as_bytes()[open] == b'{' { '}' } else { ']' };
    let close = text.rfind(close_char)?;
    (close > open).then(|| &text[open..=close])
}

/// Parses a reply into a JSON value, accepting the relaxed dialects.
pub fn parse_reply_value(reply: &str) -> Result<Value, String> {
    let text = extract_json_text(reply).ok_or_else(|| "no JSON object in reply".to_string())?;
    let text = strip_doubled_braces(text);
    if let Ok(v) = serde_json::from_str::<Value>(text) {
        return Ok(v);
    }
    let mut p = Relaxed { s: text.as_bytes(), src: text, i: 0 };
    let v = p.value(&[])?;
    p.ws();
    if p.i != p.s.len() {
        return Err(format!("trailing text at offset {}", p.i));
    }
    Ok(v)
}

fn strip_doubled_braces(mut text: &str) -> &str {
    while text.starts_with("{{") && text.ends_with("}}") {
        text = &text[1..text.len() - 1];
    }
    text
}

struct Relaxed<'a> {
    s: &'a [u8],
    src: &'a str,
    i: usize,
}

impl Relaxed<'_> {
    fn ws(&mut self) {
        while self.i < self.s.len() && self.s[self.i].is_ascii_whitespace() {
            self.i += 1;
        }
    }

    fn peek(&self) -> Option<u8> {
        self.s.get(self.i).copied()
    }

    fn expect(&mut self, c: u8) -> Result<(), String> {
        self.ws();
        if self.peek() == Some(c) {
            self.i += 1;
            Ok(())
        } else {
            Err(format!("expected '{}' at offset {}", c as char, self.i))
        }
    }

    fn value(&mut self, terminators: &[u8]) -> Result<Value, String> {
        self.ws();
        match self.peek() {
            Some(b'{') => self.object(),
            Some(b'[') => self.array(),
            Some(b'"') | Some(b'\'') => self.quoted().map(Value::String),
            Some(_) => Ok(self.bare(terminators)),
            None => Err("unexpected end of reply".into()),
        }
    }

    fn object(&mut self) -> Result<Value, String> {
        self.expect(b'{')?;
        let mut map = Map::new();
        loop {
            self.ws();
            if self.peek() == Some(b'}') {
                self.i += 1;
                return Ok(Value::Object(map));
            }
            let key = match self.peek() {
                Some(b'"') | Some(b'\'') => self.quoted()?,
                _ => {
                    let start = self.i;
                    while self.peek().is_some_and(|c| c.is_ascii_alphanumeric() || c == b'_' || c == b'-') {
                        self.i += 1;
                    }
                    if start == self.i {
                        return Err(format!("expected a key at offset {}", self.i));
                    }
                    self.src[start..self.i].to_string()
                }
            };
            self.expect(b':')?;
            let v = self.value(b",}")?;
            map.insert(key, v);
            self.ws();
            match self.peek() {
                Some(b',') => self.i += 1,
                Some(b'}') => {}
                _ => return Err(format!("expected ',' or '}}' at offset {}", self.i)),
            }
        }
    }

    fn array(&mut self) -> Result<Value, String> {
        self.expect(b'[')?;
        let mut items = Vec::new();
        loop {
            self.ws();
            if self.peek() == Some(b']') {
                self.i += 1;
                return Ok(Value::Array(items));
            }
            items.push(self.value(b",]")?);
            self.ws();
            match self.peek() {
                Some(b',') => self.i += 1,
                Some(b']') => {}
                _ => return Err(format!("expected ',' or ']' at offset {}", self.i)),
            }
        }
    }

    fn quoted(&mut self) -> Result<String, String> {
        let quote = self.s[self.i];
        self.i += 1;
        let mut out = String::new();
        let start = self.i;
        let mut last = start;
        while let Some(c) = self.peek() {
            if c == b'\\' {
                out.push_str(&self.src[last..self.i]);
                self.i += 1;
                if let Some(e) = self.peek() {
                    out.push(match e {
                        b'n' => '\n',
                        b't' => '\t',
                        other => other as char,
                    });
                    self.i += 1;
                }
                last = self.i;
            } else if c == quote {
                out.push_str(&self.src[last..self.i]);
                self.i += 1;
                return Ok(out);
            } else {
                self.i += 1;
            }
        }
        Err("unterminated string".into())
    }

    /// Unquoted scalar running up to the next terminator at this level.
    fn bare(&mut self, terminators: &[u8]) -> Value {
        let start = self.i;
        while self.peek().is_some_and(|c| !terminators.contains(&c)) {
            self.i += 1;
        }
        let raw = self.src[start..self.i].trim();
        if let Ok(n) = raw.parse::<i64>() {
            return Value::Number(n.into());
        }
        if let Some(n) = raw.parse::<f64>().ok().and_then(Number::from_f64) {
            return Value::Number(n);
        }
        match raw {
            "true" => Value::Bool(true),
            "false" => Value::Bool(false),
            "null" => Value::Null,
            _ => Value::String(raw.to_string()),
        }
    }
}

/// Reads a number that may have been sent as a string.
pub fn as_number(v: &Value) -> Option<f64> {
    match v {
        Value::Number(n) => n.as_f64(),
        Value::String(s) => s.trim().parse().ok(),
        _ => None,
    }
}

/// Reads a fixed-length numeric array.
pub fn number_array<const N: usize>(v: &Value) -> Option<[f64; N]> {
    let items = v.as_array()?;
    if items.len() != N {
        return None;
    }
    let mut out = [0.0; N];
    for (slot, item) in out.iter_mut().zip(items) {
        *slot = as_number(item)?;
    }
    Some(out)
}

/// A reply is expected to describe one object; a one-element list is
/// unwrapped, longer lists contribute their first element.
pub fn single_object(v: Value) -> Option<Map<String, Value>> {
    match v {
        Value::Object(m) => Some(m),
        Value::Array(items) => items.into_iter().next().and_then(|v| v.as_object().cloned()),
        _ => None,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;

    #[test]
    fn strict_json() {
        let v = parse_reply_value(r#"{"name": "knob", "pos": [1, 2, 3, 4]}"#).unwrap();
        assert_eq!(v, json!({"name": "knob", "pos": [1, 2, 3, 4]}));
    }

    #[test]
    fn fenced_json_with_prose() {
        let reply = "Here you go:\n```json\n{\"rotation\": [\"x\", \"CCW\"]}\n```\nThanks";
        assert_eq!(parse_reply_value(reply).unwrap(), json!({"rotation": ["x", "CCW"]}));
    }

    #[test]
    fn relaxed_unquoted_form() {
        let v = parse_reply_value("{{name: The orange Start button, pos: [412, 655, 450, 710]}}").unwrap();
        assert_eq!(v, json!({"name": "The orange Start button", "pos": [412, 655, 450, 710]}));
        let v = parse_reply_value("{rotation: [x, counterclockwise]}").unwrap();
        assert_eq!(v, json!({"rotation": ["x", "counterclockwise"]}));
        let v = parse_reply_value("{name: 'bed', pos: [1.5, 2, 3, 4], target_pos: [10, 20]}").unwrap();
        assert_eq!(v["pos"][0], json!(1.5));
        assert_eq!(v["target_pos"], json!([10, 20]));
    }

    #[test]
    fn garbage_is_an_error() {
        assert!(parse_reply_value("I cannot see that object.").is_err());
        assert!(parse_reply_value("{name: x, pos: [1, 2").is_err());
    }

    #[test]
    fn helpers() {
        assert_eq!(number_array::<2>(&json!(["3", 4.5])), Some([3.0, 4.5]));
        assert_eq!(number_array::<2>(&json!([1, 2, 3])), None);
        assert!(single_object(json!([{"a": 1}, {"a": 2}])).unwrap().contains_key("a"));
    }
}
