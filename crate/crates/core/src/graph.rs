//! Deterministic topological ordering over name-keyed dependency maps.

use std::collections::{BTreeMap, BTreeSet};

/// Kahn's algorithm with a name-ordered ready set, so the output depends only
/// on the graph and never on declaration order. `deps[n]` lists the nodes `n`
/// waits for; every dependency must itself be a key. On a cycle, returns the
/// nodes that could not be ordered.
pub(crate) fn topo_order(deps: &BTreeMap<String, BTreeSet<String>>) -> Result<Vec<String>, BTreeSet<String>> {
    let mut indegree: BTreeMap<&str, usize> = deps.keys().map(|k| (k.as_str(), 0)).collect();
    let mut dependents: BTreeMap<&str, Vec<&str>> = BTreeMap::new();
    for (node, ds) in deps {
        for d in ds {
            *indegree.get_mut(node.as_str()).expect("node") += 1;
            dependents.entry(d.as_str()).or_default().push(node.as_str());
        }
    }
    let mut ready: BTreeSet<&str> = indegree.iter().filter(|(_, &n)| n == 0).map(|(k, _)| *k).collect();
    let mut out = Vec::with_capacity(deps.len());
    while let Some(n) = ready.pop_first() {
        out.push(n.to_string());
        for m in dependents.get(n).into_iter().flatten() {
            let e = indegree.get_mut(m).expect("node");
            *e -= 1;
            if *e == 0 {
                ready.insert(m);
            }
        }
    }
    if out.len() == deps.len() {
        Ok(out)
    } else {
        let done: BTreeSet<&str> = out.iter().map(String::as_str).collect();
        Err(deps.keys().filter(|k| !done.contains(k.as_str())).cloned().collect())
    }
}

/// One concrete cycle through the `stuck` nodes left by [`topo_order`],
/// starting at the smallest name; the first node is repeated at the end.
pub(crate) fn find_cycle(deps: &BTreeMap<String, BTreeSet<String>>, stuck: &BTreeSet<String>) -> Vec<String> {
    let start = stuck.iter().next().expect("non-empty").clone();
    let mut path = vec![start.clone()];
    let mut seen = BTreeMap::from([(start, 0usize)]);
    loop {
        let cur = path.last().expect("non-empty");
        let next = deps[cur].iter().find(|d| stuck.contains(*d)).expect("stuck node has a stuck dependency").clone();
        if let Some(&i) = seen.get(&next) {
            let mut cyc: Vec<String> = path[i..].to_vec();
            cyc.push(next);
            return cyc;
        }
        seen.insert(next.clone(), path.len());
        path.push(next);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn g(edges: &[(&str, &[&str])]) -> BTreeMap<String, BTreeSet<String>> {
        edges.iter().map(|(n, ds)| (n.to_string(), ds.iter().map(|d| d.to_string()).collect())).collect()
    }

    #[test]
    fn orders_dependencies_first_with_name_ties() {
        let deps = g(&[("t2", &["t1"]), ("t1", &[]), ("a", &[])]);
        assert_eq!(topo_order(&deps).unwrap(), vec!["a", "t1", "t2"]);
    }

    #[test]
    fn reports_cycle() {
        let deps = g(&[("x", &["y"]), ("y", &["z"]), ("z", &["y"]), ("w", &[])]);
        let stuck = topo_order(&deps).unwrap_err();
        assert_eq!(stuck.len(), 3);
        assert_eq!(find_cycle(&deps, &stuck), vec!["y", "z", "y"]);
    }
}
