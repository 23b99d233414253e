use std::collections::BTreeMap;
use std::io::{BufRead, Write};
use std::path::Path;

use super::{bundled_config, write_atomic, RunConfig};
use crate::context::{shortlist, Registry, ShortlistOutcome};
use crate::error::{Error, Result};
use crate::evaluator::PropertyWeights;
use crate::explainers::Family;

struct Prompter<'a> {
    input: &'a mut dyn BufRead,
    output: &'a mut dyn Write,
}

impl Prompter<'_> {
    fn say(&mut self, text: &str) -> Result<()> {
        writeln!(self.output, "{text}").map_err(|e| Error::io("<terminal>", e))
    }

    /// Trimmed answer; end of input aborts the wizard.
    fn ask(&mut self, prompt: &str) -> Result<String> {
        write!(self.output, "{prompt}").map_err(|e| Error::io("<terminal>", e))?;
        self.output.flush().map_err(|e| Error::io("<terminal>", e))?;
        let mut line = String::new();
        let read = self.input.read_line(&mut line).map_err(|e| Error::io("<terminal>", e))?;
        if read == 0 {
            return Err(Error::Config("wizard aborted: input closed".into()));
        }
        Ok(line.trim().to_string())
    }

    fn choose(&mut self, title: &str, options: &[(&str, &str)]) -> Result<String> {
        self.say(title)?;
        for (i, (id, text)) in options.iter().enumerate() {
            self.say(&format!("  {}. {text} [{id}]", i + 1))?;
        }
        loop {
            let answer = self.ask("> ")?;
            if let Ok(k) = answer.parse::<usize>() {
                if (1..=options.len()).contains(&k) {
                    return Ok(options[k - 1].0.to_string());
                }
            }
            if let Some((id, _)) = options.iter().find(|(id, _)| *id == answer) {
                return Ok(id.to_string());
            }
            self.say(&format!("Enter a number from 1 to {}.", options.len()))?;
        }
    }

    fn number<T: std::str::FromStr>(&mut self, prompt: &str, default: T, ok: impl Fn(&T) -> bool) -> Result<T> {
        loop {
            let answer = self.ask(prompt)?;
            if answer.is_empty() {
                return Ok(default);
            }
            match answer.parse::<T>() {
                Ok(v) if ok(&v) => return Ok(v),
                _ => self.say("Not a valid value, try again.")?,
            }
        }
    }
}

/// Asks for the context, weights and epoch count and writes the resulting
/// config to `dest`. Data, model and strategy settings are copied from a
/// bundled example or from an existing config file. Nothing is written when
/// the wizard is aborted or the pairing has no solution.
pub fn wizard(registry: &Registry, input: &mut dyn BufRead, output: &mut dyn Write, dest: &Path) -> Result<RunConfig> {
    let mut p = Prompter { input, output };
    let explanandum = p.choose("What do you want to know?", &registry.list_questions())?;
    let explanan = p.choose("What form should the answer take?", &registry.list_explanans())?;

    let scope = registry.metrics_for(&explanan);
    let list = match shortlist(registry, &explanandum, &explanan, &PropertyWeights::default())? {
        ShortlistOutcome::Found(s) => s,
        ShortlistOutcome::NoCompatibleSolution { reason, suggestions } => {
            p.say(&format!("No solution available: {reason}."))?;
            for (q, a) in suggestions.iter().take(4) {
                p.say(&format!("  served: {q} + {a}"))?;
            }
            return Err(Error::NoCompatibleSolution { reason, suggestions });
        }
    };
    let ids: Vec<&str> = list.explainers.iter().map(|s| s.id()).collect();
    p.say(&format!("Candidate solutions: {}", ids.join(", ")))?;

    let weights = loop {
        let mut weights = BTreeMap::new();
        for m in &scope {
            let property = m.descriptor().property.as_str();
            let w = p.number(&format!("Weight for {} ({property}) [1]: ", m.id()), 1.0f64, |w| w.is_finite() && *w >= 0.0)?;
            weights.insert(m.id().to_string(), w);
        }
        if weights.values().any(|&w| w > 0.0) {
            break weights;
        }
        p.say("At least one weight must be positive.")?;
    };
    let epochs = p.number("Optimization epochs per solution [25]: ", 25usize, |_| true)?;

    let example = if list.explainers.iter().any(|s| s.family() == Family::Attribution) {
        "use_case_1"
    } else {
        "use_case_2"
    };
    let mut config = loop {
        let answer = p.ask(&format!("Copy data and model settings from [bundled {example}]: "))?;
        let path = if answer.is_empty() {
            bundled_config(example)
        } else {
            answer.into()
        };
        match RunConfig::load(&path) {
            Ok(c) => break c,
            Err(e) => p.say(&format!("Cannot use {}: {e}", path.display()))?,
        }
    };
    config.explanandum = explanandum;
    config.explanan = explanan;
    config.weights = weights;
    config.epochs = epochs;
    write_atomic(dest, config.to_json().as_bytes())?;
    p.say(&format!("Wrote {}", dest.display()))?;
    Ok(config)
}
