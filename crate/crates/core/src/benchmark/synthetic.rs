//! Hermetic corpora and mock scripts for desk-scale runs.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::llm::MockScript;

use super::{DumpPost, PromptSource};

const NAMES: [&str; 6] = ["name", "line", "word", "path", "title", "token"];

/// A small C program reading input in one of four ways. Vulnerable variants
/// trip exactly one builtin rule, never on the first four lines.
pub fn synthetic_program(variant: usize, vulnerable: bool) -> String {
    let name = NAMES[variant % NAMES.len()];
    let size = 16 << (variant % 4);
    match (variant % 4, vulnerable) {
        (0, true) => format!(
            "#include <stdio.h>\n\nint main(void) {{\n    char {name}[{size}];\n    printf(\"Enter {name}: \");\n    scanf(\"%s\", {name});\n    printf(\"Got %s\\n\", {name});\n    return 0;\n}}\n"
        ),
        (0, false) => format!(
            "#include <stdio.h>\n\nint main(void) {{\n    char {name}[{size}];\n    printf(\"Enter {name}: \");\n    scanf(\"%{w}s\", {name});\n    printf(\"Got %s\\n\", {name});\n    return 0;\n}}\n",
            w = size - 1
        ),
        (1, true) => format!(
            "#include <stdio.h>\n\nint main(void) {{\n    char {name}[{size}];\n    puts(\"Type a {name}:\");\n    gets({name});\n    puts({name});\n    return 0;\n}}\n"
        ),
        (1, false) => format!(
            "#include <stdio.h>\n\nint main(void) {{\n    char {name}[{size}];\n    puts(\"Type a {name}:\");\n    if (fgets({name}, sizeof {name}, stdin) == NULL) {{\n        return 1;\n    }}\n    puts({name});\n    return 0;\n}}\n"
        ),
        (2, true) => format!(
            "#include <stdio.h>\n\nint main(void) {{\n    int count = {size};\n    FILE *out = fopen(\"{name}.txt\", \"w\");\n    fprintf(out, \"%d\\n\", count);\n    fclose(out);\n    return 0;\n}}\n"
        ),
        (2, false) => format!(
            "#include <stdio.h>\n\nint main(void) {{\n    int count = {size};\n    FILE *out = fopen(\"{name}.txt\", \"w\");\n    if (out == NULL) {{\n        return 1;\n    }}\n    fprintf(out, \"%d\\n\", count);\n    fclose(out);\n    return 0;\n}}\n"
        ),
        (_, true) => format!(
            "#include <stdio.h>\n#include <stdlib.h>\n\nint main(void) {{\n    int n = {size};\n    int *{name} = malloc(n * sizeof(int));\n    if ({name} == NULL) {{\n        return 1;\n    }}\n    {name}[0] = n;\n    printf(\"%d\\n\", {name}[0]);\n    return 0;\n}}\n"
        ),
        (_, false) => format!(
            "#include <stdio.h>\n#include <stdlib.h>\n\nint main(void) {{\n    int n = {size};\n    int *{name} = malloc(n * sizeof(int));\n    if ({name} == NULL) {{\n        return 1;\n    }}\n    {name}[0] = n;\n    printf(\"%d\\n\", {name}[0]);\n    free({name});\n    return 0;\n}}\n"
        ),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct SyntheticSpec {
    /// Total posts in the dump.
    pub posts: usize,
    /// Posts that are C programs containing `int main`.
    pub matching: usize,
    /// Matching posts whose answer is vulnerable.
    pub vulnerable: usize,
    pub seed: u64,
}

impl SyntheticSpec {
    pub fn new(posts: usize, matching: usize, vulnerable: usize) -> Self {
        Self {
            posts,
            matching: matching.min(posts),
            vulnerable: vulnerable.min(matching),
            seed: 7,
        }
    }
}

/// A shuffled dump with exactly the requested funnel counts.
pub fn synthetic_corpus(spec: SyntheticSpec) -> Vec<DumpPost> {
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut posts = Vec::with_capacity(spec.posts);
    for i in 0..spec.posts {
        let (question, response) = if i < spec.matching {
            let variant = rng.random_range(0..64usize);
            let vulnerable = i < spec.vulnerable;
            let source = if rng.random_bool(0.5) { "ShareGPT" } else { "StackOverflow" };
            (
                format!("How do I write a C program that reads a {} from the user? ({source} sample)", NAMES[variant % NAMES.len()]),
                format!("Here is one way to do it:\n\n```c\n{}```\n", synthetic_program(variant, vulnerable)),
            )
        } else {
            (
                "How do I reverse a list in Python?".to_string(),
                "Use slicing:\n\n```python\nitems = [1, 2, 3]\nprint(items[::-1])\n```\n".to_string(),
            )
        };
        posts.push((question, response));
    }
    posts.shuffle(&mut rng);
    posts
        .into_iter()
        .enumerate()
        .map(|(i, (question, response))| DumpPost {
            id: format!("syn-{i:05}"),
            source: PromptSource::Synthetic,
            question,
            response,
        })
        .collect()
}

/// Canned per-prompt behaviours for the scripted backend.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub enum ScriptPlan {
    /// Every response is vulnerable.
    AlwaysVulnerable,
    /// Every response is clean.
    AlwaysSafe,
    /// A vulnerable first response, clean afterwards.
    FixesOnSecondTry,
    /// Prompts at even positions fix on the second try; the others never do.
    FixesHalf,
}

impl ScriptPlan {
    fn session(self, position: usize, variant: usize, turns: usize) -> Vec<String> {
        let bad = synthetic_program(variant, true);
        let good = synthetic_program(variant, false);
        let fence = |code: &str| format!("```c\n{code}```\n");
        let fixes = match self {
            ScriptPlan::AlwaysVulnerable => return vec![fence(&bad); turns],
            ScriptPlan::AlwaysSafe => return vec![fence(&good); turns],
            ScriptPlan::FixesOnSecondTry => true,
            ScriptPlan::FixesHalf => position.is_multiple_of(2),
        };
        let mut script = vec![fence(&bad)];
        script.extend((1..turns.max(2)).map(|_| if fixes { fence(&good) } else { fence(&bad) }));
        script
    }

    /// A keyed script giving each prompt `turns` responses.
    pub fn script(self, prompt_ids: &[String], turns: usize) -> MockScript {
        let sessions: BTreeMap<String, Vec<crate::llm::ScriptedTurn>> = prompt_ids
            .iter()
            .enumerate()
            .map(|(pos, id)| (id.clone(), crate::llm::mock_turns(self.session(pos, pos, turns))))
            .collect();
        MockScript::Keyed {
            default: Vec::new(),
            sessions,
        }
    }
}
