//! The capability vocabulary and the mapping from builtin modules, global
//! variables and native bindings onto it.

use std::collections::BTreeSet;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// A named group of related privileged operations.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Capability {
    Addon,
    Code,
    Command,
    Crypto,
    FileSystem,
    Network,
    System,
}

impl Capability {
    pub const ALL: [Capability; 7] = [
        Capability::Addon,
        Capability::Code,
        Capability::Command,
        Capability::Crypto,
        Capability::FileSystem,
        Capability::Network,
        Capability::System,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Capability::Addon => "addon",
            Capability::Code => "code",
            Capability::Command => "command",
            Capability::Crypto => "crypto",
            Capability::FileSystem => "file-system",
            Capability::Network => "network",
            Capability::System => "system",
        }
    }
}

impl fmt::Display for Capability {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
#[error("unknown capability `{0}`")]
pub struct UnknownCapability(pub String);

impl FromStr for Capability {
    type Err = UnknownCapability;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Capability::ALL.into_iter().find(|c| c.name() == s).ok_or_else(|| UnknownCapability(s.to_string()))
    }
}

/// Privileged builtin modules, bare form. The `node:` prefixed form of each
/// entry maps to the same capability.
pub const MODULE_RULES: &[(&str, Capability)] = &[
    ("vm", Capability::Code),
    ("child_process", Capability::Command),
    ("worker_threads", Capability::Command),
    ("crypto", Capability::Crypto),
    ("fs", Capability::FileSystem),
    ("fs/promises", Capability::FileSystem),
    ("net", Capability::Network),
    ("http", Capability::Network),
    ("http2", Capability::Network),
    ("https", Capability::Network),
    ("dns", Capability::Network),
    ("dns/promises", Capability::Network),
    ("tls", Capability::Network),
    ("dgram", Capability::Network),
    ("os", Capability::System),
    ("process", Capability::System),
];

/// Pattern covering native addons: any specifier ending in `.node`.
pub const ADDON_SUFFIX: &str = ".node";

pub const GLOBAL_RULES: &[(&str, Capability)] = &[
    ("eval", Capability::Code),
    ("Function", Capability::Code),
    ("Crypto", Capability::Crypto),
    ("crypto", Capability::Crypto),
    ("CryptoKey", Capability::Crypto),
    ("SubtleCrypto", Capability::Crypto),
    ("fetch", Capability::Network),
    ("process", Capability::System),
];

pub const BINDING_RULES: &[(&str, Capability)] =
    &[("spawn", Capability::Command), ("spawn_sync", Capability::Command), ("crypto", Capability::Crypto)];

/// Variables the CommonJS loader injects into every module scope.
pub const CJS_SYNTHETIC: [&str; 5] = ["require", "module", "exports", "__dirname", "__filename"];

/// Non-privileged globals of the supported runtime (Node.js 20), sorted.
pub const STANDARD_GLOBALS: &[&str] = &[
    "AbortController",
    "AbortSignal",
    "AggregateError",
    "Array",
    "ArrayBuffer",
    "Atomics",
    "BigInt",
    "BigInt64Array",
    "BigUint64Array",
    "Blob",
    "Boolean",
    "BroadcastChannel",
    "Buffer",
    "ByteLengthQueuingStrategy",
    "CompressionStream",
    "CountQueuingStrategy",
    "CustomEvent",
    "DOMException",
    "DataView",
    "Date",
    "DecompressionStream",
    "Error",
    "EvalError",
    "Event",
    "EventTarget",
    "File",
    "FinalizationRegistry",
    "Float32Array",
    "Float64Array",
    "FormData",
    "Headers",
    "Infinity",
    "Int16Array",
    "Int32Array",
    "Int8Array",
    "Intl",
    "JSON",
    "Map",
    "Math",
    "MessageChannel",
    "MessageEvent",
    "MessagePort",
    "NaN",
    "Number",
    "Object",
    "Performance",
    "PerformanceEntry",
    "PerformanceMark",
    "PerformanceMeasure",
    "PerformanceObserver",
    "PerformanceObserverEntryList",
    "PerformanceResourceTiming",
    "Promise",
    "Proxy",
    "RangeError",
    "ReadableByteStreamController",
    "ReadableStream",
    "ReadableStreamBYOBReader",
    "ReadableStreamBYOBRequest",
    "ReadableStreamDefaultController",
    "ReadableStreamDefaultReader",
    "ReferenceError",
    "Reflect",
    "RegExp",
    "Request",
    "Response",
    "Set",
    "SharedArrayBuffer",
    "String",
    "Symbol",
    "SyntaxError",
    "TextDecoder",
    "TextDecoderStream",
    "TextEncoder",
    "TextEncoderStream",
    "TransformStream",
    "TransformStreamDefaultController",
    "TypeError",
    "URIError",
    "URL",
    "URLSearchParams",
    "Uint16Array",
    "Uint32Array",
    "Uint8Array",
    "Uint8ClampedArray",
    "WeakMap",
    "WeakRef",
    "WeakSet",
    "WebAssembly",
    "WritableStream",
    "WritableStreamDefaultController",
    "WritableStreamDefaultWriter",
    "atob",
    "btoa",
    "clearImmediate",
    "clearInterval",
    "clearTimeout",
    "console",
    "decodeURI",
    "decodeURIComponent",
    "encodeURI",
    "encodeURIComponent",
    "escape",
    "global",
    "globalThis",
    "isFinite",
    "isNaN",
    "parseFloat",
    "parseInt",
    "performance",
    "queueMicrotask",
    "setImmediate",
    "setInterval",
    "setTimeout",
    "structuredClone",
    "undefined",
    "unescape",
];

const NODE_PREFIX: &str = "node:";

/// Strips the `node:` scheme from a builtin specifier.
pub fn strip_node_prefix(specifier: &str) -> &str {
    specifier.strip_prefix(NODE_PREFIX).unwrap_or(specifier)
}

fn lookup(rules: &[(&str, Capability)], name: &str) -> Option<Capability> {
    rules.iter().find(|(n, _)| *n == name).map(|&(_, c)| c)
}

/// Capability required to import `specifier`, if any.
///
/// Subpaths of a privileged module that the table does not list inherit the
/// module's capability (`child_process/x` is `command`).
pub fn capability_of_import(specifier: &str) -> Option<Capability> {
    if specifier.ends_with(ADDON_SUFFIX) {
        return Some(Capability::Addon);
    }
    let bare = strip_node_prefix(specifier);
    if let Some(c) = lookup(MODULE_RULES, bare) {
        return Some(c);
    }
    let (base, _) = bare.split_once('/')?;
    if base.is_empty() {
        return None;
    }
    lookup(MODULE_RULES, base)
}

pub fn capability_of_global(name: &str) -> Option<Capability> {
    lookup(GLOBAL_RULES, name)
}

pub fn capability_of_binding(name: &str) -> Option<Capability> {
    lookup(BINDING_RULES, name)
}

/// Privileged globals that reach guest code through a one-time accessor.
///
/// `eval` and `Function` are intrinsics of every evaluation context and are
/// governed by the code-generation flag instead; strict code may not rebind
/// `eval` at all.
pub fn is_lexically_bound_global(name: &str) -> bool {
    matches!(capability_of_global(name), Some(c) if c != Capability::Code)
}

#[derive(Debug, Error)]
pub enum ManifestError {
    #[error("failed to read builtin manifest")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("builtin manifest is not a JSON array of strings")]
    Format(#[from] serde_json::Error),
    #[error("builtin manifest contains an empty entry")]
    EmptyEntry,
}

/// How a builtin specifier is treated by the import allowlist.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BuiltinClass {
    Privileged(Capability),
    DefaultAllowed,
    Unknown,
}

const NODE20_MANIFEST: &str = include_str!("../data/builtins-node20.json");

/// The capability table together with the runtime's builtin module list.
///
/// Manifest entries are stored bare, except prefix-only modules such as
/// `node:test` which are stored with their scheme.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CapabilityMap {
    builtins: BTreeSet<String>,
}

impl Default for CapabilityMap {
    fn default() -> Self {
        Self::from_manifest_json(NODE20_MANIFEST).expect("embedded builtin manifest is valid")
    }
}

impl CapabilityMap {
    pub fn from_manifest_json(text: &str) -> Result<Self, ManifestError> {
        let entries: Vec<String> = serde_json::from_str(text)?;
        if entries.iter().any(|e| strip_node_prefix(e).is_empty()) {
            return Err(ManifestError::EmptyEntry);
        }
        Ok(Self { builtins: entries.into_iter().collect() })
    }

    pub fn from_manifest_file(path: &Path) -> Result<Self, ManifestError> {
        let text = std::fs::read_to_string(path)
            .map_err(|source| ManifestError::Io { path: path.display().to_string(), source })?;
        Self::from_manifest_json(&text)
    }

    pub fn is_builtin(&self, specifier: &str) -> bool {
        self.builtins.contains(strip_node_prefix(specifier))
            || (specifier.starts_with(NODE_PREFIX) && self.builtins.contains(specifier))
    }

    pub fn classify(&self, specifier: &str) -> BuiltinClass {
        if !self.is_builtin(specifier) {
            return BuiltinClass::Unknown;
        }
        match capability_of_import(specifier) {
            Some(c) => BuiltinClass::Privileged(c),
            None => BuiltinClass::DefaultAllowed,
        }
    }

    pub fn builtin_is_default_allowed(&self, specifier: &str) -> bool {
        self.classify(specifier) == BuiltinClass::DefaultAllowed
    }

    /// Every accepted spelling of every default-allowed builtin, sorted.
    pub fn default_allowed_specifiers(&self) -> BTreeSet<String> {
        let mut out = BTreeSet::new();
        for entry in &self.builtins {
            if capability_of_import(entry).is_some() {
                continue;
            }
            if entry.starts_with(NODE_PREFIX) {
                out.insert(entry.clone());
            } else {
                out.insert(entry.clone());
                out.insert(format!("{NODE_PREFIX}{entry}"));
            }
        }
        out
    }

    pub fn manifest_entries(&self) -> impl Iterator<Item = &str> {
        self.builtins.iter().map(String::as_str)
    }
}

/// Both spellings of every privileged module granted by `capability`.
pub fn privileged_specifiers(capability: Capability) -> Vec<String> {
    if capability == Capability::Addon {
        return vec![format!("*{ADDON_SUFFIX}")];
    }
    let mut out = Vec::new();
    for &(name, c) in MODULE_RULES {
        if c == capability {
            out.push(name.to_string());
            out.push(format!("{NODE_PREFIX}{name}"));
        }
    }
    out.sort();
    out
}

pub fn privileged_globals(capability: Capability) -> impl Iterator<Item = &'static str> {
    GLOBAL_RULES.iter().filter(move |(_, c)| *c == capability).map(|&(n, _)| n)
}

pub fn privileged_bindings(capability: Capability) -> impl Iterator<Item = &'static str> {
    BINDING_RULES.iter().filter(move |(_, c)| *c == capability).map(|&(n, _)| n)
}
