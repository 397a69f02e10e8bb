//! Tool registry with argument-schema validation and dispatch.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};
use thiserror::Error;

use super::{Method, ToolError, ToolRequest, ToolResponse, INVALID_PARAMS, METHOD_NOT_FOUND};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ArgType {
    String,
    Integer,
    Number,
    Boolean,
    Object,
    Array,
}

impl ArgType {
    fn accepts(self, v: &Value) -> bool {
        match self {
            ArgType::String => v.is_string(),
            ArgType::Integer => v.is_i64() || v.is_u64(),
            ArgType::Number => v.is_number(),
            ArgType::Boolean => v.is_boolean(),
            ArgType::Object => v.is_object(),
            ArgType::Array => v.is_array(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ArgSpec {
    #[serde(rename = "type")]
    pub ty: ArgType,
    pub required: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ToolDescriptor {
    pub name: String,
    pub description: String,
    pub arg_schema: BTreeMap<String, ArgSpec>,
}

impl ToolDescriptor {
    pub fn new(name: &str, description: &str, args: &[(&str, ArgType, bool)]) -> Self {
        Self {
            name: name.to_string(),
            description: description.to_string(),
            arg_schema: args
                .iter()
                .map(|(n, ty, required)| {
                    (
                        n.to_string(),
                        ArgSpec {
                            ty: *ty,
                            required: *required,
                        },
                    )
                })
                .collect(),
        }
    }

    /// Unknown fields, missing required fields and type mismatches are
    /// schema violations.
    pub fn validate(&self, args: &Map<String, Value>) -> Result<(), String> {
        if let Some(k) = args.keys().find(|k| !self.arg_schema.contains_key(*k)) {
            return Err(format!("`{}` takes no argument `{k}`", self.name));
        }
        for (field, spec) in &self.arg_schema {
            match args.get(field) {
                None if spec.required => return Err(format!("`{}` requires `{field}`", self.name)),
                Some(v) if !spec.ty.accepts(v) => {
                    return Err(format!("`{}`: `{field}` must be {:?}", self.name, spec.ty));
                }
                _ => {}
            }
        }
        Ok(())
    }
}

/// Handler invoked with the server-side context and validated arguments.
pub type Handler<C> =
    Box<dyn Fn(&mut C, &Map<String, Value>) -> Result<Map<String, Value>, ToolError> + Send + Sync>;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum RegistryError {
    #[error("tool `{0}` already registered")]
    DuplicateTool(String),
}

pub struct Registry<C> {
    tools: BTreeMap<String, (ToolDescriptor, Handler<C>)>,
}

impl<C> Default for Registry<C> {
    fn default() -> Self {
        Self {
            tools: BTreeMap::new(),
        }
    }
}

impl<C> Registry<C> {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn register_tool(
        &mut self,
        descriptor: ToolDescriptor,
        handler: Handler<C>,
    ) -> Result<(), RegistryError> {
        if self.tools.contains_key(&descriptor.name) {
            return Err(RegistryError::DuplicateTool(descriptor.name));
        }
        self.tools
            .insert(descriptor.name.clone(), (descriptor, handler));
        Ok(())
    }

    /// Descriptors sorted by name.
    pub fn descriptors(&self) -> Vec<ToolDescriptor> {
        self.tools.values().map(|(d, _)| d.clone()).collect()
    }

    pub fn len(&self) -> usize {
        self.tools.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tools.is_empty()
    }

    pub fn dispatch(&self, ctx: &mut C, req: &ToolRequest) -> ToolResponse {
        match (req.method, &req.params) {
            (Method::List, _) => {
                let tools =
                    serde_json::to_value(self.descriptors()).expect("descriptors serialize");
                let mut result = Map::new();
                result.insert("tools".into(), tools);
                ToolResponse::ok(req.id, result)
            }
            (Method::Call, None) => ToolResponse::err(
                req.id,
                ToolError::new(INVALID_PARAMS, "tool/call without params"),
            ),
            (Method::Call, Some(params)) => {
                let Some((desc, handler)) = self.tools.get(&params.name) else {
                    return ToolResponse::err(
                        req.id,
                        ToolError::new(METHOD_NOT_FOUND, format!("unknown tool `{}`", params.name)),
                    );
                };
                if let Err(msg) = desc.validate(&params.arguments) {
                    return ToolResponse::err(req.id, ToolError::new(INVALID_PARAMS, msg));
                }
                match handler(ctx, &params.arguments) {
                    Ok(r) => ToolResponse::ok(req.id, r),
                    Err(e) => ToolResponse::err(req.id, e),
                }
            }
        }
    }
}
