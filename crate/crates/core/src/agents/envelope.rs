/// A fenced block of a reply: ```` ```tag arg ```` ... ```` ``` ````.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Block {
    pub tag: String,
    /// Rest of the info string after the tag, trimmed.
    pub arg: String,
    pub body: String,
}

/// A model reply split into its tagged fenced blocks.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Envelope {
    pub raw: String,
    pub blocks: Vec<Block>,
}

impl Envelope {
    /// Splits `raw` into blocks. Text outside fences is ignored; an
    /// unterminated fence is an error naming its tag.
    pub fn parse(raw: &str) -> Result<Self, String> {
        let mut blocks = Vec::new();
        let mut open: Option<(String, String, Vec<&str>)> = None;
        for line in raw.lines() {
            let trimmed = line.trim();
            match open.take() {
                None => {
                    if let Some(info) = trimmed.strip_prefix("```") {
                        let info = info.trim();
                        let (tag, arg) = info.split_once(char::is_whitespace).unwrap_or((info, ""));
                        open = Some((tag.to_string(), arg.trim().to_string(), Vec::new()));
                    }
                }
                Some((tag, arg, mut lines)) => {
                    if trimmed == "```" {
                        blocks.push(Block { tag, arg, body: lines.join("\n") });
                    } else {
                        lines.push(line);
                        open = Some((tag, arg, lines));
                    }
                }
            }
        }
        if let Some((tag, ..)) = open {
            return Err(format!("unterminated `{tag}` block"));
        }
        Ok(Self { raw: raw.to_string(), blocks })
    }

    pub fn first(&self, tag: &str) -> Option<&Block> {
        self.blocks.iter().find(|b| b.tag == tag)
    }

    pub fn all<'a>(&'a self, tag: &'a str) -> impl Iterator<Item = &'a Block> + 'a {
        self.blocks.iter().filter(move |b| b.tag == tag)
    }
}

/// Non-empty lines of a block with list markers (`-`, `*`, `1.`) removed.
pub fn list_items(body: &str) -> Vec<String> {
    body.lines()
        .map(str::trim)
        .filter(|l| !l.is_empty())
        .map(|l| {
            let l = l.strip_prefix("- ").or_else(|| l.strip_prefix("* ")).unwrap_or(l);
            match l.split_once(". ") {
                Some((n, rest)) if !n.is_empty() && n.chars().all(|c| c.is_ascii_digit()) => rest.trim().to_string(),
                _ => l.to_string(),
            }
        })
        .collect()
}
