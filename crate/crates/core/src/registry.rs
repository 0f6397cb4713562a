//! Name-keyed registries of interchangeable strategies.

use std::collections::BTreeMap;
use std::sync::Arc;

use crate::error::{Error, Result};

/// Strategies of one family, looked up by the name used in configs and on the CLI.
pub struct Registry<T: ?Sized> {
    family: &'static str,
    entries: BTreeMap<&'static str, Arc<T>>,
}

impl<T: ?Sized> Registry<T> {
    pub fn new(family: &'static str) -> Self {
        Registry {
            family,
            entries: BTreeMap::new(),
        }
    }

    /// Registers `strategy` under `name`, replacing any previous entry.
    pub fn register(&mut self, name: &'static str, strategy: Arc<T>) -> &mut Self {
        self.entries.insert(name, strategy);
        self
    }

    pub fn get(&self, name: &str) -> Result<Arc<T>> {
        self.entries.get(name).cloned().ok_or_else(|| {
            Error::config(
                self.family,
                format!("unknown strategy `{name}`; available: {}", self.names().join(", ")),
            )
        })
    }

    pub fn contains(&self, name: &str) -> bool {
        self.entries.contains_key(name)
    }

    pub fn names(&self) -> Vec<&'static str> {
        self.entries.keys().copied().collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    trait Greeter: Send + Sync {
        fn greet(&self) -> String;
    }

    struct Hello;
    impl Greeter for Hello {
        fn greet(&self) -> String {
            "hello".into()
        }
    }

    #[test]
    fn lookup_and_unknown_name() {
        let mut r: Registry<dyn Greeter> = Registry::new("greeter");
        r.register("hello", Arc::new(Hello));
        assert_eq!(r.get("hello").unwrap().greet(), "hello");
        let err = r.get("bye").err().unwrap().to_string();
        assert!(err.contains("greeter") && err.contains("hello"), "{err}");
        assert_eq!(r.names(), vec!["hello"]);
    }
}
