//! Reading another channel's product through a source proxy.

use thiserror::Error;

use crate::config::SourceProxyBinding;
use crate::dataspace::{DataProduct, DataSpace, Provenance};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ProxyError {
    #[error("unknown channel `{0}`")]
    UnknownChannel(String),
    #[error("channel `{channel}` has no product `{product}`")]
    UnknownProduct { channel: String, product: String },
    #[error("`{product}` from `{channel}` is {age_ms} ms old")]
    Stale { channel: String, product: String, age_ms: i64 },
}

/// Newest value of the bound product, relabeled with the local alias and
/// stamped with where it came from. Values older than the binding's
/// staleness limit are refused.
pub fn resolve_source_proxy(binding: &SourceProxyBinding, dataspace: &DataSpace) -> Result<DataProduct, ProxyError> {
    let source = dataspace
        .handle(&binding.source_channel)
        .map_err(|_| ProxyError::UnknownChannel(binding.source_channel.clone()))?;
    let found = source.latest(&binding.product_name).ok_or_else(|| ProxyError::UnknownProduct {
        channel: binding.source_channel.clone(),
        product: binding.product_name.clone(),
    })?;
    let now = dataspace.clock().now();
    let age_ms = now.millis() - found.produced_at.millis();
    if age_ms > binding.max_staleness.as_millis() as i64 {
        return Err(ProxyError::Stale {
            channel: binding.source_channel.clone(),
            product: binding.product_name.clone(),
            age_ms,
        });
    }
    let origin = found.origin.clone().unwrap_or(Provenance {
        channel: binding.source_channel.clone(),
        product: binding.product_name.clone(),
        generation: found.generation,
    });
    Ok(DataProduct::new(&binding.local_alias, found.value.clone(), &binding.name, now).with_origin(origin))
}
