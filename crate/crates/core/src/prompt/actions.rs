//! Human-action inference: an editable rule table, optionally overridden by
//! an external text-completion model.

use std::collections::BTreeMap;
use std::path::Path;

use crate::error::{Error, Result};
use crate::vocab::{normalize_category, HumanAction, SceneType};

const DEFAULT_RULES: &str = include_str!("../../data/action_rules.json");

/// Wildcard scene-type key in the rule file.
const ANY_SCENE: &str = "*";

/// Primary action plus alternates, in preference order.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ActionRule {
    pub primary: HumanAction,
    pub alternates: Vec<HumanAction>,
}

/// `(scene type, category) -> action` table. Categories not listed map to
/// [`HumanAction::NoneAction`].
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ActionRuleTable {
    rules: BTreeMap<String, BTreeMap<String, ActionRule>>,
}

impl ActionRuleTable {
    pub fn from_json(text: &str) -> Result<Self> {
        let raw: BTreeMap<String, BTreeMap<String, Vec<String>>> = serde_json::from_str(text)?;
        let mut rules = BTreeMap::new();
        for (scene, table) in raw {
            let mut parsed = BTreeMap::new();
            for (cat, words) in table {
                let actions = words
                    .iter()
                    .map(|w| {
                        HumanAction::parse_word(w).ok_or_else(|| {
                            Error::InvalidInput(format!("unknown action '{w}' for '{cat}'"))
                        })
                    })
                    .collect::<Result<Vec<_>>>()?;
                let Some((&primary, rest)) = actions.split_first() else {
                    return Err(Error::InvalidInput(format!("no action listed for '{cat}'")));
                };
                parsed.insert(
                    normalize_category(&cat),
                    ActionRule {
                        primary,
                        alternates: rest.to_vec(),
                    },
                );
            }
            let key = if scene == ANY_SCENE {
                scene
            } else {
                scene.parse::<SceneType>()?.name().to_string()
            };
            rules.insert(key, parsed);
        }
        Ok(Self { rules })
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    pub fn rule(&self, scene: &SceneType, category: &str) -> Option<&ActionRule> {
        let cat = normalize_category(category);
        self.rules
            .get(scene.name())
            .and_then(|t| t.get(&cat))
            .or_else(|| self.rules.get(ANY_SCENE).and_then(|t| t.get(&cat)))
    }

    pub fn lookup(&self, scene: &SceneType, category: &str) -> HumanAction {
        self.rule(scene, category)
            .map_or(HumanAction::NoneAction, |r| r.primary)
    }
}

impl Default for ActionRuleTable {
    fn default() -> Self {
        Self::from_json(DEFAULT_RULES).expect("bundled action rules parse")
    }
}

/// Blocking text-completion endpoint. Implementations should enforce their
/// own timeout.
pub trait CompletionClient: Send + Sync {
    fn complete(&self, prompt: &str) -> Result<String>;
}

/// Builds the in-context query sent to a completion model.
pub fn build_llm_prompt(scene: &SceneType, categories: &[String]) -> String {
    format!(
        "In a {}, please infer the potential human-object interactions given a list of objects. \
         For example: Given objects 'chair, sofa, tv stand, cabinet, pendant lamp', you should return \
         'sitting, lying, None, touching, None'. These objects are '{}', the corresponding human actions should be:",
        scene.phrase(),
        categories.join(", ")
    )
}

/// Parses a comma-separated reply. Returns `None` unless it has exactly
/// `expected` valid action words.
pub fn parse_llm_reply(reply: &str, expected: usize) -> Option<Vec<HumanAction>> {
    let line = reply.lines().find(|l| !l.trim().is_empty())?;
    let actions: Option<Vec<_>> = line
        .split(',')
        .map(HumanAction::parse_word)
        .collect();
    actions.filter(|a| a.len() == expected)
}

/// One action per category: rule-table lookup, or the model's reply when a
/// client is given and answers validly.
pub fn infer_actions(
    categories: &[String],
    scene: &SceneType,
    rules: &ActionRuleTable,
    client: Option<&dyn CompletionClient>,
) -> Vec<HumanAction> {
    let from_rules = || {
        categories
            .iter()
            .map(|c| rules.lookup(scene, c))
            .collect::<Vec<_>>()
    };
    if categories.is_empty() {
        return Vec::new();
    }
    let Some(client) = client else {
        return from_rules();
    };
    match client.complete(&build_llm_prompt(scene, categories)) {
        Ok(reply) => parse_llm_reply(&reply, categories.len()).unwrap_or_else(|| {
            log::warn!("unusable action reply {reply:?}; falling back to rule table");
            from_rules()
        }),
        Err(e) => {
            log::warn!("action model failed ({e}); falling back to rule table");
            from_rules()
        }
    }
}

/// Connection settings for an HTTP completion endpoint.
#[cfg(feature = "llm-http")]
#[derive(Clone, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LlmClientConfig {
    pub endpoint: String,
    pub model: String,
    #[serde(default = "default_timeout")]
    pub timeout_secs: u64,
}

#[cfg(feature = "llm-http")]
fn default_timeout() -> u64 {
    30
}

/// Client for OpenAI-style `/completions` endpoints.
#[cfg(feature = "llm-http")]
pub struct HttpCompletionClient {
    config: LlmClientConfig,
    agent: ureq::Agent,
}

#[cfg(feature = "llm-http")]
impl HttpCompletionClient {
    pub fn new(config: LlmClientConfig) -> Self {
        let agent = ureq::Agent::config_builder()
            .timeout_global(Some(std::time::Duration::from_secs(config.timeout_secs)))
            .build()
            .into();
        Self { config, agent }
    }
}

#[cfg(feature = "llm-http")]
impl CompletionClient for HttpCompletionClient {
    fn complete(&self, prompt: &str) -> Result<String> {
        let body = serde_json::json!({
            "model": self.config.model,
            "prompt": prompt,
            "max_tokens": 64,
            "temperature": 0.0,
        });
        let reply: serde_json::Value = self
            .agent
            .post(&self.config.endpoint)
            .send_json(&body)
            .map_err(|e| Error::LlmClient(e.to_string()))?
            .body_mut()
            .read_json()
            .map_err(|e| Error::LlmClient(e.to_string()))?;
        reply["choices"][0]["text"]
            .as_str()
            .map(str::to_string)
            .ok_or_else(|| Error::LlmClient("reply has no choices[0].text".into()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    struct Fixed(Result<String>);

    impl CompletionClient for Fixed {
        fn complete(&self, _prompt: &str) -> Result<String> {
            match &self.0 {
                Ok(s) => Ok(s.clone()),
                Err(e) => Err(Error::LlmClient(e.to_string())),
            }
        }
    }

    fn names(xs: &[&str]) -> Vec<String> {
        xs.iter().map(|s| s.to_string()).collect()
    }

    #[test]
    fn sofa_supports_sitting_or_lying() {
        let rules = ActionRuleTable::default();
        let a = infer_actions(&names(&["sofa"]), &SceneType::LivingRoom, &rules, None);
        assert!(matches!(a[0], HumanAction::Lying | HumanAction::Sitting));
        let rule = rules.rule(&SceneType::LivingRoom, "sofa").unwrap();
        let mut all = vec![rule.primary];
        all.extend(&rule.alternates);
        assert!(all.contains(&HumanAction::Sitting) && all.contains(&HumanAction::Lying));
    }

    #[test]
    fn in_context_exemplar_is_reproduced() {
        let a = infer_actions(
            &names(&["chair", "sofa", "tv stand", "cabinet", "pendant lamp"]),
            &SceneType::LivingRoom,
            &ActionRuleTable::default(),
            None,
        );
        use HumanAction::*;
        assert_eq!(a, vec![Sitting, Lying, NoneAction, Touching, NoneAction]);
    }

    #[test]
    fn ceiling_lamp_has_no_interaction() {
        let a = infer_actions(
            &names(&["ceiling lamp"]),
            &SceneType::Bedroom,
            &ActionRuleTable::default(),
            None,
        );
        assert_eq!(a, vec![HumanAction::NoneAction]);
    }

    #[test]
    fn valid_model_reply_is_used() {
        let client = Fixed(Ok("'touching, None'".into()));
        let a = infer_actions(
            &names(&["double bed", "nightstand"]),
            &SceneType::Bedroom,
            &ActionRuleTable::default(),
            Some(&client),
        );
        assert_eq!(a, vec![HumanAction::Touching, HumanAction::NoneAction]);
    }

    #[test]
    fn malformed_or_failed_reply_falls_back() {
        let rules = ActionRuleTable::default();
        let cats = names(&["double bed", "nightstand"]);
        let expected = vec![HumanAction::Lying, HumanAction::NoneAction];
        for client in [
            Fixed(Ok("sitting".into())),
            Fixed(Ok("dancing, None".into())),
            Fixed(Err(Error::LlmClient("timeout".into()))),
        ] {
            let a = infer_actions(&cats, &SceneType::Bedroom, &rules, Some(&client));
            assert_eq!(a, expected);
        }
    }

    #[test]
    fn llm_prompt_carries_scene_and_objects() {
        let p = build_llm_prompt(&SceneType::LivingRoom, &names(&["ceiling lamp", "coffee table"]));
        assert!(p.starts_with("In a living room, please infer"));
        assert!(p.contains("'ceiling lamp, coffee table'"));
    }

    #[test]
    fn output_length_matches_input() {
        let rules = ActionRuleTable::default();
        let cats = names(&["wardrobe", "stool", "desk", "unknown thing"]);
        let a = infer_actions(&cats, &SceneType::Bedroom, &rules, None);
        assert_eq!(a.len(), cats.len());
        assert_eq!(a[3], HumanAction::NoneAction);
    }
}
