//! Strongly connected components of the directed channel graph.
//!
//! Tarjan's algorithm, iterative so deep chains in large graphs cannot
//! overflow the stack.

/// Decomposes the graph on `0..n` with the given arcs. Each component is
/// sorted ascending; the component list itself is deterministic.
pub fn strongly_connected_components(n: u32, arcs: &[(u32, u32)]) -> Vec<Vec<u32>> {
    let n = n as usize;
    let mut heads = vec![usize::MAX; n];
    let mut next = vec![usize::MAX; arcs.len()];
    for (i, &(u, _)) in arcs.iter().enumerate() {
        next[i] = heads[u as usize];
        heads[u as usize] = i;
    }

    const UNSEEN: u32 = u32::MAX;
    let mut index = vec![UNSEEN; n];
    let mut lowlink = vec![0u32; n];
    let mut on_stack = vec![false; n];
    let mut stack: Vec<u32> = Vec::new();
    let mut counter = 0u32;
    let mut components: Vec<Vec<u32>> = Vec::new();

    // Explicit DFS frames: (node, resume edge handle).
    let mut frames: Vec<(u32, usize)> = Vec::new();
    for root in 0..n as u32 {
        if index[root as usize] != UNSEEN {
            continue;
        }
        frames.push((root, heads[root as usize]));
        index[root as usize] = counter;
        lowlink[root as usize] = counter;
        counter += 1;
        stack.push(root);
        on_stack[root as usize] = true;

        while let Some(&mut (v, ref mut edge)) = frames.last_mut() {
            if *edge != usize::MAX {
                let e = *edge;
                *edge = next[e];
                let w = arcs[e].1;
                if index[w as usize] == UNSEEN {
                    index[w as usize] = counter;
                    lowlink[w as usize] = counter;
                    counter += 1;
                    stack.push(w);
                    on_stack[w as usize] = true;
                    frames.push((w, heads[w as usize]));
                } else if on_stack[w as usize] {
                    lowlink[v as usize] = lowlink[v as usize].min(index[w as usize]);
                }
            } else {
                frames.pop();
                if let Some(&mut (parent, _)) = frames.last_mut() {
                    lowlink[parent as usize] =
                        lowlink[parent as usize].min(lowlink[v as usize]);
                }
                if lowlink[v as usize] == index[v as usize] {
                    let mut component = Vec::new();
                    loop {
                        let w = stack.pop().unwrap();
                        on_stack[w as usize] = false;
                        component.push(w);
                        if w == v {
                            break;
                        }
                    }
                    component.sort_unstable();
                    components.push(component);
                }
            }
        }
    }
    components
}

/// Components ordered by node count descending, ties by smallest member.
pub fn components_by_size(mut components: Vec<Vec<u32>>) -> Vec<Vec<u32>> {
    components.sort_by(|a, b| b.len().cmp(&a.len()).then(a[0].cmp(&b[0])));
    components
}
