"""
実験モジュール
"""
