//! All channels of one configuration, sharing a data space.

use std::collections::BTreeMap;
use std::sync::Arc;

use thiserror::Error;

use super::plugin::PluginRegistry;
use super::runner::{assemble_channel, AssemblyError, Channel, ChannelOptions, ChannelState, ChannelStatus};
use super::task_manager::{LifecycleError, TaskManager};
use crate::config::{validate_config, ConfigIssue, EngineConfig, RunMode};
use crate::dataspace::{DataSpace, SpaceError};

#[derive(Debug, Error)]
pub enum EngineError {
    #[error("invalid configuration:\n{}", .0.iter().map(|i| format!("  {i}")).collect::<Vec<_>>().join("\n"))]
    Invalid(Vec<ConfigIssue>),
    #[error(transparent)]
    Assembly(#[from] AssemblyError),
    #[error(transparent)]
    Space(#[from] SpaceError),
    #[error("unknown channel `{0}`")]
    UnknownChannel(String),
    #[error(transparent)]
    Lifecycle(#[from] LifecycleError),
}

pub struct Engine {
    config: EngineConfig,
    dataspace: DataSpace,
    order: Vec<String>,
    managers: BTreeMap<String, TaskManager>,
}

impl Engine {
    /// Validate `config`, create every channel's space, then assemble the
    /// channels. Nothing runs until channels are started or polled.
    pub fn build(
        config: &EngineConfig,
        registry: &PluginRegistry,
        dataspace: DataSpace,
        mode: RunMode,
    ) -> Result<Engine, EngineError> {
        validate_config(config, registry).map_err(EngineError::Invalid)?;
        for ch in &config.channels {
            dataspace.create_space(&ch.channel_id)?;
        }
        let options = ChannelOptions {
            boot_timeout: config.defaults.boot_timeout,
            default_period: config.defaults.source_period(mode),
        };
        let mut managers = BTreeMap::new();
        for ch in &config.channels {
            let channel = Arc::new(assemble_channel(ch, registry, &dataspace, &options)?);
            managers.insert(ch.channel_id.clone(), TaskManager::new(channel, config.defaults.stop_grace));
        }
        Ok(Engine {
            config: config.clone(),
            dataspace,
            order: config.channels.iter().map(|c| c.channel_id.clone()).collect(),
            managers,
        })
    }

    pub fn config(&self) -> &EngineConfig {
        &self.config
    }

    pub fn dataspace(&self) -> &DataSpace {
        &self.dataspace
    }

    pub fn channel_ids(&self) -> &[String] {
        &self.order
    }

    pub fn channel(&self, id: &str) -> Option<&Arc<Channel>> {
        self.managers.get(id).map(TaskManager::channel)
    }

    /// Channels in configuration order.
    pub fn channels(&self) -> impl Iterator<Item = &Arc<Channel>> {
        self.order.iter().map(|id| self.managers[id].channel())
    }

    fn manager(&self, id: &str) -> Result<&TaskManager, EngineError> {
        self.managers.get(id).ok_or_else(|| EngineError::UnknownChannel(id.to_string()))
    }

    pub fn start(&self, id: &str) -> Result<ChannelState, EngineError> {
        Ok(self.manager(id)?.start()?)
    }

    pub fn stop(&self, id: &str) -> Result<ChannelState, EngineError> {
        Ok(self.manager(id)?.stop()?)
    }

    pub fn status(&self, id: &str) -> Result<ChannelStatus, EngineError> {
        Ok(self.manager(id)?.status())
    }

    pub fn start_all(&self) -> Result<(), EngineError> {
        for id in &self.order {
            self.start(id)?;
        }
        Ok(())
    }

    /// Stop every running channel.
    pub fn stop_all(&self) {
        for id in &self.order {
            let m = &self.managers[id];
            if m.is_running() {
                let _ = m.stop();
            }
        }
    }
}
