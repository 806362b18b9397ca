// Hierarchy panel state: expansion, local highlight, and dimming.
//
// Hiding a node is session state (a set_node_visibility op, emitted by the
// client). Highlighting is purely local: it feeds the highlight compositing
// layer and never leaves the browser.

import { SessionState } from './state.js';
import { SummaryModel, SummaryNode } from './preview.js';

export interface PanelRow {
  id: string;
  name: string;
  depth: number;
  // the node's own visibility flag
  visible: boolean;
  // true when an ancestor is hidden, so the whole row renders dimmed even
  // if its own flag is still on
  dimmed: boolean;
  highlighted: boolean;
  expanded: boolean;
  hasChildren: boolean;
}

export class HierarchyPanel {
  expanded = new Set<string>();
  highlights = new Set<string>();

  toggleExpanded(nid: string): void {
    if (this.expanded.has(nid)) this.expanded.delete(nid);
    else this.expanded.add(nid);
  }

  /** Local-only highlight toggle; no session op involved. */
  toggleHighlight(nid: string): void {
    if (this.highlights.has(nid)) this.highlights.delete(nid);
    else this.highlights.add(nid);
  }

  /** Rows currently presented, in tree order, respecting expansion. The
   * root is always expanded. */
  rows(model: SummaryModel, state: SessionState): PanelRow[] {
    const out: PanelRow[] = [];
    const visibleOf = (nid: string) => state.nodeVisibility.get(nid) ?? true;
    const walk = (nid: string, depth: number, ancestorHidden: boolean) => {
      const node = model.nodes.get(nid) as SummaryNode;
      const visible = visibleOf(nid);
      const expanded = depth === 0 || this.expanded.has(nid);
      out.push({
        id: nid,
        name: node.name,
        depth,
        visible,
        dimmed: ancestorHidden,
        highlighted: this.highlights.has(nid),
        expanded,
        hasChildren: node.children.length > 0,
      });
      if (!expanded) return;
      for (const child of node.children) {
        walk(child, depth + 1, ancestorHidden || !visible);
      }
    };
    walk(model.root, 0, false);
    return out;
  }
}
