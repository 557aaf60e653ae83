"""
Evaluator backends for RankSight
"""
