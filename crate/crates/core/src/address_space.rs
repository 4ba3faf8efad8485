//! In-memory information model: typed nodes, references, values and the
//! RL marker properties that flag a variable as part of an action or
//! observation space.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Absolute tolerance used when enumerating `Double` marker grids.
pub const DOUBLE_GRID_TOLERANCE: f64 = 1e-9;

/// Well-known id of the `Objects` folder.
pub const OBJECTS_FOLDER: NodeId = NodeId {
    namespace: 0,
    identifier: Identifier::Numeric(85),
};

/// Namespace that hosts the marker ObjectTypes and materialized marker properties.
pub const RL_NAMESPACE: u16 = 1;

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Identifier {
    Numeric(u32),
    Text(String),
}

/// Node identity. Ordering is `(namespace, numeric-before-text, identifier)`,
/// which is also the address-space iteration order.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct NodeId {
    pub namespace: u16,
    pub identifier: Identifier,
}

impl NodeId {
    pub const fn numeric(namespace: u16, id: u32) -> Self {
        NodeId {
            namespace,
            identifier: Identifier::Numeric(id),
        }
    }

    /// Text identifiers must be non-empty.
    pub fn text(namespace: u16, id: impl Into<String>) -> Result<Self, AddressSpaceError> {
        let id = id.into();
        if id.is_empty() {
            return Err(AddressSpaceError::EmptyIdentifier);
        }
        Ok(NodeId {
            namespace,
            identifier: Identifier::Text(id),
        })
    }
}

impl fmt::Display for NodeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match &self.identifier {
            Identifier::Numeric(n) => write!(f, "ns={};i={}", self.namespace, n),
            Identifier::Text(s) => write!(f, "ns={};s={}", self.namespace, s),
        }
    }
}

impl FromStr for NodeId {
    type Err = AddressSpaceError;

    /// Parses the `ns=<u16>;i=<u32>` / `ns=<u16>;s=<text>` notation.
    /// A missing `ns=` prefix means namespace 0.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let bad = || AddressSpaceError::BadNodeIdSyntax(s.to_string());
        let (namespace, rest) = match s.strip_prefix("ns=") {
            Some(tail) => {
                let (ns, rest) = tail.split_once(';').ok_or_else(bad)?;
                (ns.parse::<u16>().map_err(|_| bad())?, rest)
            }
            None => (0, s),
        };
        if let Some(num) = rest.strip_prefix("i=") {
            Ok(NodeId::numeric(namespace, num.parse().map_err(|_| bad())?))
        } else if let Some(text) = rest.strip_prefix("s=") {
            NodeId::text(namespace, text)
        } else {
            Err(bad())
        }
    }
}

impl Serialize for NodeId {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for NodeId {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// A variable payload. `Double` values must be finite; use [`Value::double`]
/// to construct one from an arbitrary float.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Value {
    Bool(bool),
    Int32(i32),
    Double(f64),
    Text(String),
}

impl Value {
    pub fn double(v: f64) -> Result<Self, AddressSpaceError> {
        if v.is_finite() {
            Ok(Value::Double(v))
        } else {
            Err(AddressSpaceError::NonFiniteDouble)
        }
    }

    pub fn is_valid(&self) -> bool {
        !matches!(self, Value::Double(v) if !v.is_finite())
    }

    pub fn same_variant(&self, other: &Value) -> bool {
        std::mem::discriminant(self) == std::mem::discriminant(other)
    }

    pub fn type_name(&self) -> &'static str {
        match self {
            Value::Bool(_) => "Bool",
            Value::Int32(_) => "Int32",
            Value::Double(_) => "Double",
            Value::Text(_) => "Text",
        }
    }
}

impl fmt::Display for Value {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Value::Bool(b) => write!(f, "{b}"),
            Value::Int32(i) => write!(f, "{i}"),
            Value::Double(d) => write!(f, "{d}"),
            Value::Text(s) => write!(f, "{s:?}"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum MarkerRole {
    Action,
    Observation,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum MarkerKind {
    IntAction,
    DoubleAction,
    IntObservation,
    DoubleObservation,
}

impl MarkerKind {
    pub const ALL: [MarkerKind; 4] = [
        MarkerKind::IntAction,
        MarkerKind::DoubleAction,
        MarkerKind::IntObservation,
        MarkerKind::DoubleObservation,
    ];

    pub fn role(self) -> MarkerRole {
        match self {
            MarkerKind::IntAction | MarkerKind::DoubleAction => MarkerRole::Action,
            MarkerKind::IntObservation | MarkerKind::DoubleObservation => MarkerRole::Observation,
        }
    }

    pub fn is_int(self) -> bool {
        matches!(self, MarkerKind::IntAction | MarkerKind::IntObservation)
    }

    pub fn name(self) -> &'static str {
        match self {
            MarkerKind::IntAction => "IntAction",
            MarkerKind::DoubleAction => "DoubleAction",
            MarkerKind::IntObservation => "IntObservation",
            MarkerKind::DoubleObservation => "DoubleObservation",
        }
    }

    /// Id of the ObjectType node that types a materialized marker property.
    pub fn type_node_id(self) -> NodeId {
        NodeId {
            namespace: RL_NAMESPACE,
            identifier: Identifier::Text(self.name().to_string()),
        }
    }

    pub fn from_type_node_id(id: &NodeId) -> Option<MarkerKind> {
        MarkerKind::ALL
            .into_iter()
            .find(|k| k.type_node_id() == *id)
    }
}

impl fmt::Display for MarkerKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum MarkerRange {
    Int { min: i32, max: i32, step: i32 },
    Double { min: f64, max: f64, step: f64 },
}

/// Declares a variable as part of the action or observation space, with the
/// finite value grid `min, min+step, ..., <= max`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RlMarker {
    role: MarkerRole,
    range: MarkerRange,
}

impl RlMarker {
    pub fn new(role: MarkerRole, range: MarkerRange) -> Result<Self, AddressSpaceError> {
        let invalid = |why: &str| Err(AddressSpaceError::InvalidMarker(why.to_string()));
        match range {
            MarkerRange::Int { min, max, step } => {
                if step <= 0 {
                    return invalid("step must be > 0");
                }
                if min > max {
                    return invalid("min must be <= max");
                }
                if (i64::from(max) - i64::from(min)) % i64::from(step) != 0 {
                    return invalid("max - min must be a multiple of step");
                }
            }
            MarkerRange::Double { min, max, step } => {
                if !(min.is_finite() && max.is_finite() && step.is_finite()) {
                    return invalid("bounds must be finite");
                }
                if step <= 0.0 {
                    return invalid("step must be > 0");
                }
                if min > max {
                    return invalid("min must be <= max");
                }
            }
        }
        Ok(RlMarker { role, range })
    }

    pub fn int_action(min: i32, max: i32, step: i32) -> Result<Self, AddressSpaceError> {
        Self::new(MarkerRole::Action, MarkerRange::Int { min, max, step })
    }

    pub fn int_observation(min: i32, max: i32, step: i32) -> Result<Self, AddressSpaceError> {
        Self::new(MarkerRole::Observation, MarkerRange::Int { min, max, step })
    }

    pub fn double_action(min: f64, max: f64, step: f64) -> Result<Self, AddressSpaceError> {
        Self::new(MarkerRole::Action, MarkerRange::Double { min, max, step })
    }

    pub fn double_observation(min: f64, max: f64, step: f64) -> Result<Self, AddressSpaceError> {
        Self::new(
            MarkerRole::Observation,
            MarkerRange::Double { min, max, step },
        )
    }

    /// Rebuilds a marker from its kind and `min`/`max`/`step` values, as
    /// read back from a materialized marker property.
    pub fn from_values(
        kind: MarkerKind,
        min: &Value,
        max: &Value,
        step: &Value,
    ) -> Result<Self, AddressSpaceError> {
        let range = match (kind.is_int(), min, max, step) {
            (true, Value::Int32(min), Value::Int32(max), Value::Int32(step)) => MarkerRange::Int {
                min: *min,
                max: *max,
                step: *step,
            },
            (false, Value::Double(min), Value::Double(max), Value::Double(step)) => {
                MarkerRange::Double {
                    min: *min,
                    max: *max,
                    step: *step,
                }
            }
            _ => {
                return Err(AddressSpaceError::InvalidMarker(format!(
                    "bounds do not match marker kind {kind}"
                )))
            }
        };
        Self::new(kind.role(), range)
    }

    pub fn role(&self) -> MarkerRole {
        self.role
    }

    pub fn range(&self) -> MarkerRange {
        self.range
    }

    pub fn kind(&self) -> MarkerKind {
        match (self.role, self.range) {
            (MarkerRole::Action, MarkerRange::Int { .. }) => MarkerKind::IntAction,
            (MarkerRole::Action, MarkerRange::Double { .. }) => MarkerKind::DoubleAction,
            (MarkerRole::Observation, MarkerRange::Int { .. }) => MarkerKind::IntObservation,
            (MarkerRole::Observation, MarkerRange::Double { .. }) => MarkerKind::DoubleObservation,
        }
    }

    /// `(min, max, step)` as values of the marker's data type.
    pub fn bounds(&self) -> (Value, Value, Value) {
        match self.range {
            MarkerRange::Int { min, max, step } => {
                (Value::Int32(min), Value::Int32(max), Value::Int32(step))
            }
            MarkerRange::Double { min, max, step } => {
                (Value::Double(min), Value::Double(max), Value::Double(step))
            }
        }
    }

    /// Whether `v` is one of the grid points of [`enumerate_values`].
    pub fn contains(&self, v: &Value) -> bool {
        match (self.range, v) {
            (MarkerRange::Int { min, max, step }, Value::Int32(x)) => {
                *x >= min && *x <= max && (i64::from(*x) - i64::from(min)) % i64::from(step) == 0
            }
            (MarkerRange::Double { .. }, Value::Double(x)) => enumerate_values(self)
                .iter()
                .any(|g| matches!(g, Value::Double(g) if (g - x).abs() <= DOUBLE_GRID_TOLERANCE)),
            _ => false,
        }
    }
}

impl fmt::Display for RlMarker {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let (min, max, step) = self.bounds();
        write!(f, "{}(min={min}, max={max}, step={step})", self.kind())
    }
}

/// The ascending value grid of a marker. Double grids stop at the last term
/// `<= max + 1e-9`; any remainder of the range is dropped.
pub fn enumerate_values(marker: &RlMarker) -> Vec<Value> {
    match marker.range {
        MarkerRange::Int { min, max, step } => {
            let (min, max, step) = (i64::from(min), i64::from(max), i64::from(step));
            let count = (max - min) / step + 1;
            (0..count)
                .map(|k| Value::Int32((min + k * step) as i32))
                .collect()
        }
        MarkerRange::Double { min, max, step } => {
            // Terms are computed as min + k*step to avoid accumulated drift.
            let mut out = Vec::new();
            let mut k = 0u64;
            loop {
                let v = min + (k as f64) * step;
                if v > max + DOUBLE_GRID_TOLERANCE {
                    break;
                }
                out.push(Value::Double(v));
                k += 1;
            }
            out
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum NodeClass {
    Object,
    Variable,
    Method,
    ObjectType,
    Property,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ReferenceType {
    Organizes,
    HasComponent,
    HasProperty,
    HasTypeDefinition,
}

impl ReferenceType {
    /// Hierarchical references are followed when browsing the whole tree.
    pub fn is_hierarchical(self) -> bool {
        !matches!(self, ReferenceType::HasTypeDefinition)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Reference {
    pub reference_type: ReferenceType,
    pub target: NodeId,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Node {
    pub id: NodeId,
    pub browse_name: String,
    pub node_class: NodeClass,
    pub type_definition: Option<NodeId>,
    pub value: Option<Value>,
    pub references: Vec<Reference>,
    pub marker: Option<RlMarker>,
}

impl Node {
    fn bare(id: NodeId, browse_name: &str, node_class: NodeClass) -> Self {
        Node {
            id,
            browse_name: browse_name.to_string(),
            node_class,
            type_definition: None,
            value: None,
            references: Vec::new(),
            marker: None,
        }
    }

    pub fn object(id: NodeId, browse_name: &str) -> Self {
        Self::bare(id, browse_name, NodeClass::Object)
    }

    pub fn variable(id: NodeId, browse_name: &str, value: Value) -> Self {
        let mut node = Self::bare(id, browse_name, NodeClass::Variable);
        node.type_definition = Some(BASE_DATA_VARIABLE_TYPE);
        node.value = Some(value);
        node
    }

    pub fn method(id: NodeId, browse_name: &str) -> Self {
        Self::bare(id, browse_name, NodeClass::Method)
    }

    pub fn with_reference(mut self, reference_type: ReferenceType, target: NodeId) -> Self {
        self.references.push(Reference {
            reference_type,
            target,
        });
        self
    }

    pub fn descriptor(&self) -> NodeDescriptor {
        NodeDescriptor {
            id: self.id.clone(),
            browse_name: self.browse_name.clone(),
            node_class: self.node_class,
            type_definition: self.type_definition.clone(),
            marker: self.marker,
        }
    }
}

/// `BaseDataVariableType`. Referenced descriptively from variables; it is not
/// materialized as a node.
pub const BASE_DATA_VARIABLE_TYPE: NodeId = NodeId::numeric(0, 63);

/// What a browse reports about a reference target.
#[derive(Debug, Clone, PartialEq)]
pub struct NodeDescriptor {
    pub id: NodeId,
    pub browse_name: String,
    pub node_class: NodeClass,
    pub type_definition: Option<NodeId>,
    pub marker: Option<RlMarker>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BrowseEntry {
    pub reference_type: ReferenceType,
    pub target: NodeDescriptor,
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AddressSpaceError {
    #[error("node {0} already exists")]
    DuplicateNodeId(NodeId),
    #[error("reference from {from} to missing node {target}")]
    DanglingReference { from: NodeId, target: NodeId },
    #[error("no such node {0}")]
    NoSuchNode(NodeId),
    #[error("node {0} is not a variable")]
    NotAVariable(NodeId),
    #[error("node {0} already carries a marker")]
    AlreadyMarked(NodeId),
    #[error("invalid marker: {0}")]
    InvalidMarker(String),
    #[error("value {value} outside the marker grid of {node}")]
    ValueOutOfRange { node: NodeId, value: Value },
    #[error("type mismatch on {node}: expected {expected}, got {got}")]
    TypeMismatch {
        node: NodeId,
        expected: &'static str,
        got: &'static str,
    },
    #[error("node {0} is read-only")]
    ReadOnly(NodeId),
    #[error("double values must be finite")]
    NonFiniteDouble,
    #[error("text node identifiers must be non-empty")]
    EmptyIdentifier,
    #[error("cannot parse node id {0:?}")]
    BadNodeIdSyntax(String),
    #[error("root {0} must be an Object node")]
    BadRoot(NodeId),
    #[error("{0} may not carry a value or marker")]
    ValueOnNonVariable(NodeId),
}

pub type ChangeListener = Box<dyn FnMut(&NodeId, &Value) + Send>;

/// The node set of one server.
pub struct AddressSpace {
    nodes: BTreeMap<NodeId, Node>,
    root: NodeId,
    listeners: Vec<ChangeListener>,
}

impl fmt::Debug for AddressSpace {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("AddressSpace")
            .field("root", &self.root)
            .field("nodes", &self.nodes.len())
            .field("listeners", &self.listeners.len())
            .finish()
    }
}

impl Default for AddressSpace {
    fn default() -> Self {
        Self::new()
    }
}

impl AddressSpace {
    /// A space holding only the `Objects` folder.
    pub fn new() -> Self {
        let mut nodes = BTreeMap::new();
        nodes.insert(OBJECTS_FOLDER, Node::object(OBJECTS_FOLDER, "Objects"));
        AddressSpace {
            nodes,
            root: OBJECTS_FOLDER,
            listeners: Vec::new(),
        }
    }

    /// A space rooted at a caller-supplied Object node.
    pub fn with_root(root: Node) -> Result<Self, AddressSpaceError> {
        if root.node_class != NodeClass::Object {
            return Err(AddressSpaceError::BadRoot(root.id));
        }
        let mut space = AddressSpace {
            nodes: BTreeMap::new(),
            root: root.id.clone(),
            listeners: Vec::new(),
        };
        space.add_node(root)?;
        Ok(space)
    }

    pub fn root(&self) -> &NodeId {
        &self.root
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn get(&self, id: &NodeId) -> Option<&Node> {
        self.nodes.get(id)
    }

    /// Nodes in ascending id order.
    pub fn nodes(&self) -> impl Iterator<Item = &Node> {
        self.nodes.values()
    }

    pub fn find_by_browse_name(&self, name: &str) -> Option<&Node> {
        self.nodes.values().find(|n| n.browse_name == name)
    }

    pub fn add_node(&mut self, node: Node) -> Result<(), AddressSpaceError> {
        if self.nodes.contains_key(&node.id) {
            return Err(AddressSpaceError::DuplicateNodeId(node.id));
        }
        for r in &node.references {
            if r.target != node.id && !self.nodes.contains_key(&r.target) {
                return Err(AddressSpaceError::DanglingReference {
                    from: node.id.clone(),
                    target: r.target.clone(),
                });
            }
        }
        if let Some(Value::Double(d)) = &node.value {
            if !d.is_finite() {
                return Err(AddressSpaceError::NonFiniteDouble);
            }
        }
        if node.node_class != NodeClass::Variable && (node.value.is_some() || node.marker.is_some())
        {
            return Err(AddressSpaceError::ValueOnNonVariable(node.id));
        }
        if node.marker.is_some() {
            // Markers must go through attach_marker so the property view exists.
            return Err(AddressSpaceError::InvalidMarker(
                "use attach_marker to mark a node".into(),
            ));
        }
        self.nodes.insert(node.id.clone(), node);
        Ok(())
    }

    /// Adds `node` and a reference of `reference_type` from `parent` to it.
    pub fn add_child(
        &mut self,
        parent: &NodeId,
        reference_type: ReferenceType,
        node: Node,
    ) -> Result<(), AddressSpaceError> {
        if !self.nodes.contains_key(parent) {
            return Err(AddressSpaceError::NoSuchNode(parent.clone()));
        }
        let id = node.id.clone();
        self.add_node(node)?;
        self.add_reference(parent, reference_type, id)
    }

    pub fn add_reference(
        &mut self,
        from: &NodeId,
        reference_type: ReferenceType,
        target: NodeId,
    ) -> Result<(), AddressSpaceError> {
        if !self.nodes.contains_key(&target) {
            return Err(AddressSpaceError::DanglingReference {
                from: from.clone(),
                target,
            });
        }
        let node = self
            .nodes
            .get_mut(from)
            .ok_or_else(|| AddressSpaceError::NoSuchNode(from.clone()))?;
        node.references.push(Reference {
            reference_type,
            target,
        });
        Ok(())
    }

    fn ensure_marker_type(&mut self, kind: MarkerKind) {
        let id = kind.type_node_id();
        self.nodes
            .entry(id.clone())
            .or_insert_with(|| Node::bare(id, kind.name(), NodeClass::ObjectType));
    }

    /// Marks a variable. The marker is stored on the node and materialized
    /// as a `HasProperty`-referenced property node typed by the marker kind,
    /// with `min`/`max`/`step` component variables.
    pub fn attach_marker(
        &mut self,
        target: &NodeId,
        marker: RlMarker,
    ) -> Result<(), AddressSpaceError> {
        let node = self
            .nodes
            .get(target)
            .ok_or_else(|| AddressSpaceError::NoSuchNode(target.clone()))?;
        if node.node_class != NodeClass::Variable {
            return Err(AddressSpaceError::NotAVariable(target.clone()));
        }
        if node.marker.is_some() {
            return Err(AddressSpaceError::AlreadyMarked(target.clone()));
        }
        let current = node.value.clone().unwrap_or(Value::Bool(false));
        if !marker.contains(&current) {
            return Err(AddressSpaceError::ValueOutOfRange {
                node: target.clone(),
                value: current,
            });
        }

        let kind = marker.kind();
        self.ensure_marker_type(kind);
        let prop_id = marker_property_id(target);
        let (min, max, step) = marker.bounds();
        let mut prop = Node::bare(
            prop_id.clone(),
            match kind.role() {
                MarkerRole::Action => "ActionNode",
                MarkerRole::Observation => "ObservationNode",
            },
            NodeClass::Property,
        );
        prop.type_definition = Some(kind.type_node_id());
        prop.references.push(Reference {
            reference_type: ReferenceType::HasTypeDefinition,
            target: kind.type_node_id(),
        });
        for (name, value) in [("min", min), ("max", max), ("step", step)] {
            let child_id = marker_component_id(&prop_id, name);
            self.add_node(Node::variable(child_id.clone(), name, value))?;
            prop.references.push(Reference {
                reference_type: ReferenceType::HasComponent,
                target: child_id,
            });
        }
        self.add_node(prop)?;
        let node = self.nodes.get_mut(target).expect("checked above");
        node.references.push(Reference {
            reference_type: ReferenceType::HasProperty,
            target: prop_id,
        });
        node.marker = Some(marker);
        Ok(())
    }

    /// The marker of `target`, read from the denormalized node field.
    pub fn resolve_marker(&self, target: &NodeId) -> Option<RlMarker> {
        self.nodes.get(target).and_then(|n| n.marker)
    }

    /// Reconstructs the marker of `target` from its materialized property
    /// node. Must agree with [`resolve_marker`].
    pub fn marker_from_properties(&self, target: &NodeId) -> Option<RlMarker> {
        let node = self.nodes.get(target)?;
        node.references
            .iter()
            .filter(|r| r.reference_type == ReferenceType::HasProperty)
            .find_map(|r| {
                let prop = self.nodes.get(&r.target)?;
                let kind = MarkerKind::from_type_node_id(prop.type_definition.as_ref()?)?;
                let component = |name: &str| {
                    prop.references
                        .iter()
                        .filter(|c| c.reference_type == ReferenceType::HasComponent)
                        .filter_map(|c| self.nodes.get(&c.target))
                        .find(|c| c.browse_name == name)
                        .and_then(|c| c.value.clone())
                };
                RlMarker::from_values(
                    kind,
                    &component("min")?,
                    &component("max")?,
                    &component("step")?,
                )
                .ok()
            })
    }

    pub fn add_change_listener(&mut self, listener: ChangeListener) {
        self.listeners.push(listener);
    }

    pub fn value(&self, id: &NodeId) -> Result<&Value, AddressSpaceError> {
        let node = self
            .nodes
            .get(id)
            .ok_or_else(|| AddressSpaceError::NoSuchNode(id.clone()))?;
        node.value
            .as_ref()
            .ok_or_else(|| AddressSpaceError::NotAVariable(id.clone()))
    }

    /// Replaces a variable's value. Listeners run synchronously, in
    /// registration order, only when the stored value actually changes.
    /// Returns whether it changed.
    pub fn set_value(&mut self, id: &NodeId, v: Value) -> Result<bool, AddressSpaceError> {
        if !v.is_valid() {
            return Err(AddressSpaceError::NonFiniteDouble);
        }
        if is_marker_component(id) {
            return Err(AddressSpaceError::ReadOnly(id.clone()));
        }
        let node = self
            .nodes
            .get_mut(id)
            .ok_or_else(|| AddressSpaceError::NoSuchNode(id.clone()))?;
        let current = node
            .value
            .as_ref()
            .ok_or_else(|| AddressSpaceError::NotAVariable(id.clone()))?;
        if !current.same_variant(&v) {
            return Err(AddressSpaceError::TypeMismatch {
                node: id.clone(),
                expected: current.type_name(),
                got: v.type_name(),
            });
        }
        if let Some(marker) = &node.marker {
            if !marker.contains(&v) {
                return Err(AddressSpaceError::ValueOutOfRange {
                    node: id.clone(),
                    value: v,
                });
            }
        }
        if *current == v {
            return Ok(false);
        }
        node.value = Some(v.clone());
        for listener in &mut self.listeners {
            listener(id, &v);
        }
        Ok(true)
    }

    pub fn browse(&self, id: &NodeId) -> Result<Vec<BrowseEntry>, AddressSpaceError> {
        let node = self
            .nodes
            .get(id)
            .ok_or_else(|| AddressSpaceError::NoSuchNode(id.clone()))?;
        Ok(node
            .references
            .iter()
            .map(|r| BrowseEntry {
                reference_type: r.reference_type,
                target: self
                    .nodes
                    .get(&r.target)
                    .expect("references resolve")
                    .descriptor(),
            })
            .collect())
    }
}

const MARKER_SUFFIX: &str = "#rl";

fn marker_property_id(target: &NodeId) -> NodeId {
    NodeId {
        namespace: RL_NAMESPACE,
        identifier: Identifier::Text(format!("{target}{MARKER_SUFFIX}")),
    }
}

fn marker_component_id(prop: &NodeId, name: &str) -> NodeId {
    NodeId {
        namespace: prop.namespace,
        identifier: Identifier::Text(format!("{}.{name}", text_of(prop))),
    }
}

fn text_of(id: &NodeId) -> &str {
    match &id.identifier {
        Identifier::Text(s) => s,
        Identifier::Numeric(_) => "",
    }
}

fn is_marker_component(id: &NodeId) -> bool {
    id.namespace == RL_NAMESPACE
        && ["min", "max", "step"].iter().any(|c| {
            text_of(id)
                .strip_suffix(c)
                .and_then(|s| s.strip_suffix('.'))
                .is_some_and(|s| s.ends_with(MARKER_SUFFIX))
        })
}
