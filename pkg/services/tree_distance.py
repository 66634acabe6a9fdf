#!/usr/bin/env python3
# -*- coding: utf-8 -*-
"""
有序带标签树的编辑距离（Zhang–Shasha）
插入 / 删除 / 重标记代价均为 1
"""

from collections import Counter
from typing import List, Tuple

from core.models import AstTree


def _postorder(tree: AstTree) -> Tuple[List[str], List[int]]:
    """
    后序遍历

    Returns:
        (labels, leftmost)：leftmost[i] 为节点 i 最左叶子后代的后序编号
    """
    labels: List[str] = []
    leftmost: List[int] = []
    stack = [[tree.root, 0, None]]
    while stack:
        frame = stack[-1]
        node, idx, left = frame
        if idx < len(node.children):
            frame[1] += 1
            stack.append([node.children[idx], 0, None])
            continue

        stack.pop()
        i = len(labels)
        labels.append(node.label)
        lml = left if left is not None else i
        leftmost.append(lml)
        # 第一个完成的子节点决定父节点的最左叶子
        if stack and stack[-1][2] is None:
            stack[-1][2] = lml
    return labels, leftmost


def _keyroots(leftmost: List[int]) -> List[int]:
    highest = {}
    for i, lml in enumerate(leftmost):
        highest[lml] = i
    return sorted(highest.values())


def tree_edit_distance(a: AstTree, b: AstTree) -> int:
    """
    Zhang–Shasha 树编辑距离

    Returns:
        最小编辑代价；对称，当且仅当两树标签同构时为 0
    """
    lab1, l1 = _postorder(a)
    lab2, l2 = _postorder(b)
    n1, n2 = len(lab1), len(lab2)
    td = [[0] * n2 for _ in range(n1)]

    for i in _keyroots(l1):
        for j in _keyroots(l2):
            li, lj = l1[i], l2[j]
            rows, cols = i - li + 2, j - lj + 2
            fd = [[0] * cols for _ in range(rows)]
            for x in range(1, rows):
                fd[x][0] = fd[x - 1][0] + 1
            for y in range(1, cols):
                fd[0][y] = fd[0][y - 1] + 1

            for x in range(1, rows):
                ii = li + x - 1
                for y in range(1, cols):
                    jj = lj + y - 1
                    if l1[ii] == li and l2[jj] == lj:
                        cost = 0 if lab1[ii] == lab2[jj] else 1
                        value = min(fd[x - 1][y] + 1, fd[x][y - 1] + 1, fd[x - 1][y - 1] + cost)
                        fd[x][y] = value
                        td[ii][jj] = value
                    else:
                        p, q = l1[ii] - li, l2[jj] - lj
                        fd[x][y] = min(fd[x - 1][y] + 1, fd[x][y - 1] + 1, fd[p][q] + td[ii][jj])

    return td[n1 - 1][n2 - 1]


def label_lower_bound(a: AstTree, b: AstTree) -> int:
    """
    编辑距离下界：max(n1, n2) − |labels(a) ∩ labels(b)|（多重集交）
    """
    la, lb = Counter(a.labels()), Counter(b.labels())
    overlap = sum((la & lb).values())
    return max(sum(la.values()), sum(lb.values())) - overlap


def edit_ratio(a: AstTree, b: AstTree) -> float:
    """编辑距离 / 两树节点数之和"""
    return tree_edit_distance(a, b) / float(a.node_count + b.node_count)
