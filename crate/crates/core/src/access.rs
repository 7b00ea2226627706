//! Group-plus-discretionary authorization.
//!
//! Every sample is an object owned by exactly one group. A subject may act
//! on it when it belongs to that group, when it holds an explicit grant, or
//! (reads only) when the sample is public. Rights are positive only, so
//! adding a grant can never turn an allowed decision into a denied one.
//! Deletion is never authorized; administrators tombstone instead.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::string::{String, ToString};
use alloc::vec::Vec;
use core::fmt;

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    Pi,
    Researcher,
    PhdStudent,
    Student,
}

impl Role {
    pub const ALL: [Role; 4] = [Role::Pi, Role::Researcher, Role::PhdStudent, Role::Student];

    pub fn as_str(self) -> &'static str {
        match self {
            Role::Pi => "pi",
            Role::Researcher => "researcher",
            Role::PhdStudent => "phd_student",
            Role::Student => "student",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Action {
    Read,
    Write,
    Update,
    Delete,
}

impl Action {
    pub const ALL: [Action; 4] = [Action::Read, Action::Write, Action::Update, Action::Delete];
}

/// A single grantable right.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Right {
    Read,
    Write,
    Update,
}

/// A set of positive rights.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Default, Serialize, Deserialize)]
#[serde(from = "Vec<Right>", into = "Vec<Right>")]
pub struct Rights(u8);

impl Rights {
    pub const NONE: Rights = Rights(0);
    pub const READ: Rights = Rights(1);
    pub const WRITE: Rights = Rights(2);
    pub const UPDATE: Rights = Rights(4);
    pub const ALL: Rights = Rights(7);

    fn bit(r: Right) -> u8 {
        match r {
            Right::Read => 1,
            Right::Write => 2,
            Right::Update => 4,
        }
    }

    pub fn from_bits(bits: u8) -> Self {
        Rights(bits & 7)
    }

    pub fn bits(self) -> u8 {
        self.0
    }

    pub fn is_empty(self) -> bool {
        self.0 == 0
    }

    pub fn union(self, other: Rights) -> Rights {
        Rights(self.0 | other.0)
    }

    pub fn contains(self, other: Rights) -> bool {
        self.0 & other.0 == other.0
    }

    pub fn allows(self, action: Action) -> bool {
        match action {
            Action::Read => self.0 & 1 != 0,
            Action::Write => self.0 & 2 != 0,
            Action::Update => self.0 & 4 != 0,
            Action::Delete => false,
        }
    }
}

impl From<Vec<Right>> for Rights {
    fn from(v: Vec<Right>) -> Self {
        Rights(v.into_iter().fold(0, |acc, r| acc | Rights::bit(r)))
    }
}

impl From<Rights> for Vec<Right> {
    fn from(r: Rights) -> Self {
        [Right::Read, Right::Write, Right::Update]
            .into_iter()
            .filter(|x| r.0 & Rights::bit(*x) != 0)
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DecisionBasis {
    Group,
    Discretionary,
    Public,
    DeniedDefault,
    DeniedDelete,
}

impl DecisionBasis {
    pub fn as_str(self) -> &'static str {
        match self {
            DecisionBasis::Group => "group",
            DecisionBasis::Discretionary => "discretionary",
            DecisionBasis::Public => "public",
            DecisionBasis::DeniedDefault => "denied_default",
            DecisionBasis::DeniedDelete => "denied_delete",
        }
    }
}

impl fmt::Display for DecisionBasis {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Decision {
    pub allowed: bool,
    pub basis: DecisionBasis,
}

impl Decision {
    fn allow(basis: DecisionBasis) -> Self {
        Decision { allowed: true, basis }
    }

    fn deny(basis: DecisionBasis) -> Self {
        Decision { allowed: false, basis }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Subject {
    pub user_id: String,
    pub group_id: String,
    pub role: Role,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Group {
    pub group_id: String,
    pub owner: String,
    pub members: BTreeMap<String, Role>,
    pub representatives: BTreeSet<String>,
}

impl Group {
    /// The owner, or a member the owner designated as representative.
    pub fn can_administer(&self, user: &str) -> bool {
        self.owner == user || self.representatives.contains(user)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ObjectRef {
    pub object_id: String,
    pub owning_group: String,
    pub public: bool,
    pub tombstoned: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Grant {
    pub subject: String,
    pub object: String,
    pub rights: Rights,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GrantOutcome {
    Recorded,
    /// The grantee already belongs to the owning group; nothing recorded.
    Redundant,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum AccessError {
    #[error("NOT_OWNER: {0}")]
    NotOwner(String),
    #[error("NOT_ADMIN: {0}")]
    NotAdmin(String),
    #[error("DUPLICATE_GROUP: {0}")]
    DuplicateGroup(String),
    #[error("ALREADY_MEMBER_ELSEWHERE: {user} belongs to {group}")]
    AlreadyMemberElsewhere { user: String, group: String },
    #[error("UNKNOWN_GROUP: {0}")]
    UnknownGroup(String),
    #[error("UNKNOWN_OBJECT: {0}")]
    UnknownObject(String),
    #[error("UNREGISTERED_USER: {0}")]
    UnregisteredUser(String),
    #[error("NOT_MEMBER: {user} is not in {group}")]
    NotMember { user: String, group: String },
    #[error("EMPTY_RIGHTS")]
    EmptyRights,
    #[error("OBJECT_EXISTS: {0}")]
    ObjectExists(String),
    #[error("OWNER_IS_PI: the owner of {0} keeps the pi role")]
    OwnerIsPi(String),
}

impl AccessError {
    pub fn code(&self) -> &'static str {
        match self {
            AccessError::NotOwner(_) => "NOT_OWNER",
            AccessError::NotAdmin(_) => "NOT_ADMIN",
            AccessError::DuplicateGroup(_) => "DUPLICATE_GROUP",
            AccessError::AlreadyMemberElsewhere { .. } => "ALREADY_MEMBER_ELSEWHERE",
            AccessError::UnknownGroup(_) => "UNKNOWN_GROUP",
            AccessError::UnknownObject(_) => "UNKNOWN_OBJECT",
            AccessError::UnregisteredUser(_) => "UNREGISTERED_USER",
            AccessError::NotMember { .. } => "NOT_MEMBER",
            AccessError::EmptyRights => "EMPTY_RIGHTS",
            AccessError::ObjectExists(_) => "OBJECT_EXISTS",
            AccessError::OwnerIsPi(_) => "OWNER_IS_PI",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct AccessControl {
    groups: BTreeMap<String, Group>,
    /// user -> group
    membership: BTreeMap<String, String>,
    objects: BTreeMap<String, ObjectRef>,
    grants: BTreeMap<(String, String), Rights>,
    admins: BTreeSet<String>,
}

impl AccessControl {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with_admins<I, S>(admins: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        AccessControl {
            admins: admins.into_iter().map(Into::into).collect(),
            ..Self::default()
        }
    }

    pub fn set_admins(&mut self, admins: BTreeSet<String>) {
        self.admins = admins;
    }

    pub fn is_admin(&self, user: &str) -> bool {
        self.admins.contains(user)
    }

    pub fn subject(&self, user: &str) -> Option<Subject> {
        let group_id = self.membership.get(user)?;
        let role = self.groups[group_id].members[user];
        Some(Subject {
            user_id: user.to_string(),
            group_id: group_id.clone(),
            role,
        })
    }

    pub fn group(&self, group_id: &str) -> Option<&Group> {
        self.groups.get(group_id)
    }

    pub fn groups(&self) -> impl Iterator<Item = &Group> {
        self.groups.values()
    }

    pub fn group_of(&self, user: &str) -> Option<&str> {
        self.membership.get(user).map(String::as_str)
    }

    pub fn object(&self, object_id: &str) -> Option<&ObjectRef> {
        self.objects.get(object_id)
    }

    pub fn objects(&self) -> impl Iterator<Item = &ObjectRef> {
        self.objects.values()
    }

    pub fn grants(&self) -> impl Iterator<Item = Grant> + '_ {
        self.grants.iter().map(|((subject, object), rights)| Grant {
            subject: subject.clone(),
            object: object.clone(),
            rights: *rights,
        })
    }

    pub fn grant_rights(&self, user: &str, object: &str) -> Rights {
        self.grants
            .get(&(user.to_string(), object.to_string()))
            .copied()
            .unwrap_or_default()
    }

    // Decisions.

    /// The full decision for `user` acting on `object`.
    pub fn authorize(&self, user: &str, object: &str, action: Action) -> Result<Decision, AccessError> {
        let obj = self
            .objects
            .get(object)
            .ok_or_else(|| AccessError::UnknownObject(object.to_string()))?;
        if action == Action::Delete {
            return Ok(Decision::deny(DecisionBasis::DeniedDelete));
        }
        Ok(if self.group_allows(user, obj, action) {
            Decision::allow(DecisionBasis::Group)
        } else if self.grant_rights(user, object).allows(action) {
            Decision::allow(DecisionBasis::Discretionary)
        } else if obj.public && action == Action::Read {
            Decision::allow(DecisionBasis::Public)
        } else {
            Decision::deny(DecisionBasis::DeniedDefault)
        })
    }

    fn group_allows(&self, user: &str, obj: &ObjectRef, action: Action) -> bool {
        action != Action::Delete && self.membership.get(user) == Some(&obj.owning_group)
    }

    pub fn authorize_group_only(&self, user: &str, object: &str, action: Action) -> bool {
        self.objects
            .get(object)
            .is_some_and(|o| self.group_allows(user, o, action))
    }

    pub fn authorize_discretionary_only(&self, user: &str, object: &str, action: Action) -> bool {
        self.objects.contains_key(object) && self.grant_rights(user, object).allows(action)
    }

    pub fn public_read(&self, object: &str, action: Action) -> bool {
        action == Action::Read && self.objects.get(object).is_some_and(|o| o.public)
    }

    /// Readable and not tombstoned.
    pub fn visible(&self, user: &str, object: &str) -> bool {
        self.objects.get(object).is_some_and(|o| !o.tombstoned)
            && self
                .authorize(user, object, Action::Read)
                .is_ok_and(|d| d.allowed)
    }

    pub fn visible_objects(&self, user: &str) -> BTreeSet<String> {
        self.objects
            .keys()
            .filter(|o| self.visible(user, o))
            .cloned()
            .collect()
    }

    // Checked mutations. Each `check_*` validates without changing state;
    // the matching unchecked `apply_*` is used for replay.

    pub fn check_create_group(&self, actor: &str, group_id: &str, owner: &str) -> Result<(), AccessError> {
        if !self.is_admin(actor) {
            return Err(AccessError::NotAdmin(actor.to_string()));
        }
        if self.groups.contains_key(group_id) {
            return Err(AccessError::DuplicateGroup(group_id.to_string()));
        }
        if let Some(g) = self.membership.get(owner) {
            return Err(AccessError::AlreadyMemberElsewhere {
                user: owner.to_string(),
                group: g.clone(),
            });
        }
        Ok(())
    }

    pub fn apply_create_group(&mut self, group_id: &str, owner: &str) {
        let mut members = BTreeMap::new();
        members.insert(owner.to_string(), Role::Pi);
        self.groups.insert(
            group_id.to_string(),
            Group {
                group_id: group_id.to_string(),
                owner: owner.to_string(),
                members,
                representatives: BTreeSet::new(),
            },
        );
        self.membership.insert(owner.to_string(), group_id.to_string());
    }

    pub fn create_group(&mut self, actor: &str, group_id: &str, owner: &str) -> Result<(), AccessError> {
        self.check_create_group(actor, group_id, owner)?;
        self.apply_create_group(group_id, owner);
        Ok(())
    }

    pub fn check_add_member(&self, actor: &str, group_id: &str, user: &str, role: Role) -> Result<(), AccessError> {
        let group = self
            .groups
            .get(group_id)
            .ok_or_else(|| AccessError::UnknownGroup(group_id.to_string()))?;
        if group.owner != actor {
            return Err(AccessError::NotOwner(actor.to_string()));
        }
        match self.membership.get(user) {
            Some(g) if g != group_id => Err(AccessError::AlreadyMemberElsewhere {
                user: user.to_string(),
                group: g.clone(),
            }),
            _ if user == group.owner && role != Role::Pi => Err(AccessError::OwnerIsPi(group_id.to_string())),
            _ => Ok(()),
        }
    }

    /// Adds `user` or changes the role of an existing member.
    pub fn apply_add_member(&mut self, group_id: &str, user: &str, role: Role) {
        if let Some(group) = self.groups.get_mut(group_id) {
            group.members.insert(user.to_string(), role);
            self.membership.insert(user.to_string(), group_id.to_string());
        }
    }

    pub fn add_member(&mut self, actor: &str, group_id: &str, user: &str, role: Role) -> Result<(), AccessError> {
        self.check_add_member(actor, group_id, user, role)?;
        self.apply_add_member(group_id, user, role);
        Ok(())
    }

    pub fn check_set_representative(&self, actor: &str, group_id: &str, user: &str) -> Result<(), AccessError> {
        let group = self
            .groups
            .get(group_id)
            .ok_or_else(|| AccessError::UnknownGroup(group_id.to_string()))?;
        if group.owner != actor {
            return Err(AccessError::NotOwner(actor.to_string()));
        }
        if !group.members.contains_key(user) {
            return Err(AccessError::NotMember {
                user: user.to_string(),
                group: group_id.to_string(),
            });
        }
        Ok(())
    }

    pub fn apply_set_representative(&mut self, group_id: &str, user: &str, representative: bool) {
        if let Some(group) = self.groups.get_mut(group_id) {
            if representative {
                group.representatives.insert(user.to_string());
            } else {
                group.representatives.remove(user);
            }
        }
    }

    pub fn set_representative(&mut self, actor: &str, group_id: &str, user: &str, representative: bool) -> Result<(), AccessError> {
        self.check_set_representative(actor, group_id, user)?;
        self.apply_set_representative(group_id, user, representative);
        Ok(())
    }

    /// A new sample becomes an object owned by the creator's group.
    pub fn check_register_object(&self, actor: &str, object: &str) -> Result<String, AccessError> {
        let group = self
            .membership
            .get(actor)
            .ok_or_else(|| AccessError::UnregisteredUser(actor.to_string()))?;
        if self.objects.contains_key(object) {
            return Err(AccessError::ObjectExists(object.to_string()));
        }
        Ok(group.clone())
    }

    pub fn apply_register_object(&mut self, object: &str, owning_group: &str) {
        self.objects.insert(
            object.to_string(),
            ObjectRef {
                object_id: object.to_string(),
                owning_group: owning_group.to_string(),
                public: false,
                tombstoned: false,
            },
        );
    }

    pub fn register_object(&mut self, actor: &str, object: &str) -> Result<(), AccessError> {
        let group = self.check_register_object(actor, object)?;
        self.apply_register_object(object, &group);
        Ok(())
    }

    pub fn check_grant(&self, granter: &str, subject: &str, object: &str, rights: Rights) -> Result<GrantOutcome, AccessError> {
        if rights.is_empty() {
            return Err(AccessError::EmptyRights);
        }
        let obj = self
            .objects
            .get(object)
            .ok_or_else(|| AccessError::UnknownObject(object.to_string()))?;
        let group = &self.groups[&obj.owning_group];
        if !group.can_administer(granter) {
            return Err(AccessError::NotOwner(granter.to_string()));
        }
        let grantee_group = self
            .membership
            .get(subject)
            .ok_or_else(|| AccessError::UnregisteredUser(subject.to_string()))?;
        if *grantee_group == obj.owning_group {
            return Ok(GrantOutcome::Redundant);
        }
        Ok(GrantOutcome::Recorded)
    }

    /// Grants accumulate: new rights are added to any already held.
    pub fn apply_grant(&mut self, subject: &str, object: &str, rights: Rights) {
        let slot = self
            .grants
            .entry((subject.to_string(), object.to_string()))
            .or_default();
        *slot = slot.union(rights);
    }

    pub fn grant_discretionary(&mut self, granter: &str, subject: &str, object: &str, rights: Rights) -> Result<GrantOutcome, AccessError> {
        let outcome = self.check_grant(granter, subject, object, rights)?;
        if outcome == GrantOutcome::Recorded {
            self.apply_grant(subject, object, rights);
        }
        Ok(outcome)
    }

    pub fn check_set_public(&self, actor: &str, object: &str) -> Result<(), AccessError> {
        let obj = self
            .objects
            .get(object)
            .ok_or_else(|| AccessError::UnknownObject(object.to_string()))?;
        if !self.groups[&obj.owning_group].can_administer(actor) {
            return Err(AccessError::NotOwner(actor.to_string()));
        }
        Ok(())
    }

    pub fn apply_set_public(&mut self, object: &str, public: bool) {
        if let Some(o) = self.objects.get_mut(object) {
            o.public = public;
        }
    }

    pub fn set_public(&mut self, actor: &str, object: &str, public: bool) -> Result<(), AccessError> {
        self.check_set_public(actor, object)?;
        self.apply_set_public(object, public);
        Ok(())
    }

    pub fn check_admin_action(&self, actor: &str, object: &str) -> Result<(), AccessError> {
        if !self.is_admin(actor) {
            return Err(AccessError::NotAdmin(actor.to_string()));
        }
        if !self.objects.contains_key(object) {
            return Err(AccessError::UnknownObject(object.to_string()));
        }
        Ok(())
    }

    pub fn apply_tombstone(&mut self, object: &str, tombstoned: bool) {
        if let Some(o) = self.objects.get_mut(object) {
            o.tombstoned = tombstoned;
        }
    }

    pub fn admin_tombstone(&mut self, actor: &str, object: &str) -> Result<(), AccessError> {
        self.check_admin_action(actor, object)?;
        self.apply_tombstone(object, true);
        Ok(())
    }

    pub fn admin_restore(&mut self, actor: &str, object: &str) -> Result<(), AccessError> {
        self.check_admin_action(actor, object)?;
        self.apply_tombstone(object, false);
        Ok(())
    }
}
