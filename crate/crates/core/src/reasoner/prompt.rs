//! Prompt layout, in order:
//!
//! 1. system instructions (including the `TARGET: <mark>` answer grammar)
//! 2. `## Candidates`: one `[mark] category (id)` line per candidate
//! 3. `## Current scene`: the mark-annotated semantics
//! 4. `## Previous gaze target`: present once a target has been recorded
//! 5. `## History`: the last k cycles, oldest first; omitted when empty

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use super::marking::MarkedScene;
use super::pipeline::MemoryBuffer;

pub const SYSTEM_INSTRUCTIONS: &str = "\
You control where a humanoid robot looks during a social interaction.
Each candidate in the scene carries an integer mark. Choose the single
candidate a person in the robot's position would most naturally look at next,
following human gaze-orienting habits: look where others point or refer, at
people who just appeared, at whoever is speaking, and at what others are
jointly attending to.
Answer with exactly one line of the form `TARGET: <mark>`.";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Prompt {
    pub text: String,
    /// Reference to the mark-annotated image of the current cycle.
    pub image: String,
}

pub fn synthesize_prompt(marked: &MarkedScene, buffer: &MemoryBuffer) -> Prompt {
    let mut text = String::from(SYSTEM_INSTRUCTIONS);
    text.push_str("\n\n## Candidates\n");
    for c in &marked.candidates {
        writeln!(text, "[{}] {} ({})", c.mark, c.category, c.instance_id).unwrap();
    }
    write!(text, "\n## Current scene (cycle {})\n{}\n", marked.t, marked.semantics).unwrap();
    if let Some(prev) = buffer.previous_record() {
        write!(text, "\n## Previous gaze target\n{}\n", prev.summary()).unwrap();
    }
    if !buffer.history().is_empty() {
        text.push_str("\n## History\n");
        for h in buffer.history() {
            writeln!(text, "- cycle {}: {} -> {}", h.t, h.semantics, h.target).unwrap();
        }
    }
    Prompt {
        text,
        image: marked.image.clone(),
    }
}

#[cfg(test)]
mod tests {
    use super::super::fixtures::*;
    use super::super::marking::mark_scene;
    use super::super::pipeline::{step_cycle, MemoryBuffer};
    use super::super::ScriptedBackend;
    use super::*;
    use std::collections::BTreeMap;

    #[test]
    fn first_cycle_has_no_history() {
        let c = cycle(0, vec![instance("a", "person", 10.0, 1.0), instance("b", "cup", 300.0, 1.0)]);
        let p = synthesize_prompt(&mark_scene(&c).unwrap(), &MemoryBuffer::default());
        assert!(!p.text.contains("## History"));
        assert!(!p.text.contains("## Previous gaze target"));
        assert_eq!(p.image, "frames/0000.png#marked");
    }

    #[test]
    fn every_mark_listed_once() {
        let c = cycle(
            0,
            (0..5)
                .map(|i| instance(&format!("obj-{i}"), "cup", 10.0 + 100.0 * i as f64, 1.0))
                .collect(),
        );
        let m = mark_scene(&c).unwrap();
        let p = synthesize_prompt(&m, &MemoryBuffer::default());
        let list = p.text.split("## Candidates\n").nth(1).unwrap().split("\n\n").next().unwrap();
        for mark in m.marks() {
            assert_eq!(list.matches(&format!("[{mark}]")).count(), 1);
        }
    }

    #[test]
    fn prompt_matches_golden_file() {
        let cycles = vec![
            cycle(0, vec![instance("person-1", "person", 100.0, 1.8), instance("cup-1", "cup", 400.0, 1.1)]),
            cycle(1, vec![instance("person-1", "person", 100.0, 1.8), instance("cup-1", "cup", 400.0, 1.1)]),
            cycle(
                2,
                vec![
                    instance("person-1", "person", 100.0, 1.8),
                    instance("person-2", "person", 500.0, 2.2),
                    instance("cup-1", "cup", 400.0, 1.1),
                ],
            ),
        ];
        let mut s = scenario(cycles);
        s.cycles[2].semantics = "{person-2} enters and waves while {person-1} holds {cup-1}.".into();
        let mut backend = ScriptedBackend::new(BTreeMap::from([(0, "TARGET: 2".into()), (1, "no idea".into())]));
        let mut buffer = MemoryBuffer::default();
        for t in 0..2 {
            step_cycle(&s, t, &mut buffer, &mut backend);
        }
        let m = mark_scene(&s.cycles[2]).unwrap();
        let p = synthesize_prompt(&m, &buffer);
        assert_eq!(p, synthesize_prompt(&m, &buffer));
        assert_eq!(p.text, include_str!("../../tests/golden/prompt.txt"));
    }
}
